import importlib
import os
import sys
import tempfile
from typing import List, Tuple

import psutil


class StartupValidator:
    def __init__(self, output_dir='results'):
        self.output_dir = output_dir
        self.validation_results = []
        self.critical_errors = []
        self.warnings = []

    def validate(self) -> Tuple[bool, List[str], List[str]]:
        """Run all startup validations"""
        self.validation_results.clear()
        self.critical_errors.clear()
        self.warnings.clear()

        self._validate_python_version()
        self._validate_required_packages()
        self._validate_system_resources()
        self._validate_output_directory()

        can_start = len(self.critical_errors) == 0

        return can_start, self.critical_errors, self.warnings

    def _validate_python_version(self):
        """tomllib needs Python 3.11"""
        min_version = (3, 11)
        current_version = sys.version_info[:2]

        if current_version < min_version:
            self.critical_errors.append(
                f"Python {min_version[0]}.{min_version[1]}+ required, "
                f"but running {current_version[0]}.{current_version[1]}"
            )
        else:
            self.validation_results.append(f"Python version {current_version[0]}.{current_version[1]} OK")

    def _validate_required_packages(self):
        """Validate required Python packages are installed"""
        required_packages = ['numpy', 'scipy', 'matplotlib', 'psutil']

        missing_packages = []

        for package in required_packages:
            try:
                importlib.import_module(package)
                self.validation_results.append(f"Package {package} OK")
            except ImportError:
                missing_packages.append(package)

        if missing_packages:
            self.critical_errors.append(
                f"Missing required packages: {', '.join(missing_packages)}. "
                f"Run: pip install {' '.join(missing_packages)}"
            )

    def _validate_system_resources(self):
        """Validate system has sufficient resources"""
        try:
            memory = psutil.virtual_memory()
            available_gb = memory.available / (1024 ** 3)

            if available_gb < 0.5:
                self.warnings.append(f"Low available memory: {available_gb:.1f}GB")
            else:
                self.validation_results.append(f"Available memory: {available_gb:.1f}GB OK")

            cpu_count = psutil.cpu_count() or 1
            self.validation_results.append(f"CPU count: {cpu_count}")

        except Exception as e:
            self.warnings.append(f"Error checking system resources: {str(e)}")

    def _validate_output_directory(self):
        """Validate the output directory is writable"""
        try:
            os.makedirs(self.output_dir, exist_ok=True)
            with tempfile.NamedTemporaryFile(dir=self.output_dir, prefix='.write_test'):
                pass
            self.validation_results.append(f"Output directory {self.output_dir} writable")
        except OSError as e:
            self.critical_errors.append(f"Cannot write to output directory {self.output_dir}: {e}")

    def get_validation_summary(self) -> str:
        """Get a formatted validation summary"""
        summary = []

        if self.validation_results:
            summary.append("Validation Results:")
            for result in self.validation_results:
                summary.append(f"  OK {result}")

        if self.warnings:
            summary.append("Warnings:")
            for warning in self.warnings:
                summary.append(f"  !! {warning}")

        if self.critical_errors:
            summary.append("Critical Errors:")
            for error in self.critical_errors:
                summary.append(f"  XX {error}")

        return "\n".join(summary)

    def run_startup_validation(self):
        """Run startup validation and return results"""
        can_start, errors, warnings = self.validate()
        return {
            'success': can_start,
            'can_start': can_start,
            'errors': list(errors),
            'warnings': list(warnings),
            'checks': list(self.validation_results)
        }


def validate_startup(output_dir='results'):
    """Convenience wrapper used by the command line"""
    return StartupValidator(output_dir).run_startup_validation()
