import numpy as np

from .evolution import CoefficientSpec, EvolutionOperator, StepPropagators, TimeGrid
from .inclusion import InclusionSpec, SelectionPath, SelectionPolicy, evaluate_F_delayed, nemytskii
from .mild_solver import (
    Impulse,
    free_trajectory,
    integrate_mild,
    mild_global_formula,
    steering_iteration,
)
from .phase_space import (
    HistorySegment,
    bg_norm,
    bg_norm_direct,
    build_history,
    check_history_growth,
    segment_norm,
)
from .spectral_state import (
    ModeVector,
    StateVector,
    duality_values,
    lp_norm_values,
    modes_to_values,
)
from .steering import (
    ControlVector,
    GramianMatrix,
    gramian,
    gramian_by_factorization,
    resolvent_solve,
    unique_continuation_check,
)

SUITES = ('duality', 'evolution', 'gramian', 'resolvent', 'phase_space', 'inclusion',
          'impulses', 'unique_continuation', 'solver', 'steering')


def _result(name):
    return {'name': name, 'is_valid': True, 'errors': [], 'warnings': [], 'checks': []}


def _record(result, check, passed, message=None, **data):
    entry = {'check': check, 'passed': bool(passed)}
    entry.update({k: (float(v) if isinstance(v, (np.floating, np.integer)) else v) for k, v in data.items()})
    result['checks'].append(entry)
    if not passed:
        result['is_valid'] = False
        result['errors'].append(message or f"{check} failed: {data}")
    return passed


def _relative(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


class ValidationFramework:
    def __init__(self, seed=0, samples=1000, logger=None):
        self.seed = seed
        self.samples = samples
        self.logger = logger
        self.validation_rules = {
            'duality': 1e-9,
            'cocycle': 1e-10,
            'adjoint': 1e-10,
            'gramian_closed_form': 1e-8,
            'gramian_factorization': 1e-8,
            'symmetry': 1e-12,
            'resolvent_bound': 1e-9,
            'newton_agreement': 1e-10,
            'bg_cross_check': 1e-8,
            'global_formula': 1e-8,
            'decay': 1e-10,
            'order_ratio': (3.5, 4.5),
            'terminal_identity_factor': 10.0
        }

    def _rng(self, offset=0):
        return np.random.default_rng([self.seed, offset])

    def run_suites(self, problem, names=None):
        """Run the named invariant suites (all by default) and aggregate them"""
        names = list(names or SUITES)
        results = []
        for offset, name in enumerate(names):
            suite = getattr(self, f"validate_{name}")
            result = suite(problem, self._rng(offset))
            if self.logger:
                self.logger.log_suite_result(result)
            results.append(result)
        return {
            'is_valid': all(r['is_valid'] for r in results),
            'suites': results,
            'failed': [r['name'] for r in results if not r['is_valid']]
        }

    def validate_duality(self, problem, rng):
        result = _result('duality')
        tol = self.validation_rules['duality']
        points = problem.grid.points
        for p in (1.5, 2.0, 3.0, 4.0):
            grid = problem.grid.with_exponent(p)
            x = rng.normal(size=(self.samples, points)) * rng.uniform(0.1, 10.0, size=(self.samples, 1))
            J = duality_values(x, grid.weights, p)
            norm_x = lp_norm_values(x, grid.weights, p)
            norm_J = lp_norm_values(J, grid.weights, grid.q)
            pair = np.sum(grid.weights * x * J, axis=1)
            pairing_err = float(np.max(np.abs(pair - norm_x ** 2) / norm_x ** 2))
            norm_err = float(np.max(np.abs(norm_J - norm_x) / norm_x))
            _record(result, f'pairing_p{p:g}', pairing_err <= tol, f"<x, J x> != ||x||^2 for p={p}: {pairing_err:.3e}",
                    max_relative_error=pairing_err)
            _record(result, f'dual_norm_p{p:g}', norm_err <= tol, f"||J x||_q != ||x||_p for p={p}: {norm_err:.3e}",
                    max_relative_error=norm_err)
            scaled = duality_values(3.5 * x, grid.weights, p)
            homog = float(np.max(np.abs(scaled - 3.5 * J)) / max(np.max(np.abs(J)), 1e-300))
            _record(result, f'homogeneity_p{p:g}', homog <= 1e-12, max_relative_error=homog)
            y = rng.normal(size=(self.samples, points))
            holder_gap = np.abs(np.sum(grid.weights * x * y, axis=1)) - norm_x * lp_norm_values(y, grid.weights, grid.q)
            _record(result, f'holder_p{p:g}', bool(np.all(holder_gap <= 1e-12 * norm_x)), max_gap=float(np.max(holder_gap)))
            if p == 2.0:
                _record(result, 'hilbert_identity', np.array_equal(J, x))
        zero = duality_values(np.zeros(points), problem.grid.weights, problem.grid.p)
        _record(result, 'zero_maps_to_zero', not np.any(zero))
        return result

    def validate_evolution(self, problem, rng):
        result = _result('evolution')
        horizon = problem.horizon
        modes = problem.modes
        coefficients = {
            'configured': problem.propagators.evolution.coefficient,
            'unit': CoefficientSpec('constant', base=1.0),
            'affine': CoefficientSpec('affine', base=1.0, slope=0.5, holder_const=0.5)
        }
        for label, coefficient in coefficients.items():
            verification = coefficient.verify(horizon)
            _record(result, f'coefficient_{label}', verification['is_valid'], "; ".join(verification['errors']) or None)
            evo = EvolutionOperator(coefficient, horizon, modes)
            cocycle = adjoint = contraction = 0.0
            identity = True
            for _ in range(self.samples):
                s, r, t = np.sort(rng.uniform(0.0, horizon, size=3))
                f = ModeVector(rng.normal(size=modes))
                g = ModeVector(rng.normal(size=modes))
                composed = evo.apply_U(t, r, evo.apply_U(r, s, f)).coeffs
                direct = evo.apply_U(t, s, f).coeffs
                cocycle = max(cocycle, np.linalg.norm(composed - direct) / f.norm())
                lhs = float(direct @ g.coeffs)
                rhs = float(f.coeffs @ evo.apply_U_adjoint(t, s, g).coeffs)
                adjoint = max(adjoint, abs(lhs - rhs) / (f.norm() * g.norm()))
                contraction = max(contraction, np.linalg.norm(direct) / f.norm())
                identity = identity and np.array_equal(evo.apply_U(s, s, f).coeffs, f.coeffs)
            _record(result, f'cocycle_{label}', cocycle <= self.validation_rules['cocycle'], max_residual=cocycle)
            _record(result, f'adjoint_{label}', adjoint <= self.validation_rules['adjoint'], max_residual=adjoint)
            _record(result, f'contraction_{label}', contraction <= 1.0 + 1e-14, max_ratio=contraction)
            _record(result, f'identity_{label}', identity)

            profile = evo.compactness_profile(horizon, 0.0)
            positive = profile.values[profile.values > 0]
            decreasing = bool(np.all(np.diff(positive) < 0))
            _record(result, f'compactness_{label}', profile.compact and decreasing, mu=profile.mu)

            smooth = ModeVector(1.0 / np.arange(1, modes + 1) ** 2)
            base = evo.apply_U(0.5 * horizon, 0.0, smooth).coeffs
            gaps = [np.linalg.norm(evo.apply_U(0.5 * horizon + d, 0.0, smooth).coeffs - base)
                    for d in horizon * np.array([0.2, 0.1, 0.05, 0.025, 0.0125])]
            _record(result, f'strong_continuity_{label}', bool(np.all(np.diff(gaps) < 0)), gaps=[float(v) for v in gaps])
        return result

    def validate_gramian(self, problem, rng):
        result = _result('gramian')
        evo = problem.propagators.evolution
        control = problem.context.control
        exact = gramian(evo.horizon, evo.coefficient, evo.modes, control)
        factored = gramian_by_factorization(evo.horizon, evo.coefficient, evo.modes, control)
        scale = max(float(np.max(np.abs(exact.matrix))), 1e-300)
        gap = float(np.max(np.abs(exact.matrix - factored.matrix))) / scale
        _record(result, 'factorization', gap <= self.validation_rules['gramian_factorization'], max_relative_gap=gap)
        assembled = problem.context.gramian.matrix
        step_gap = float(np.max(np.abs(exact.matrix - assembled))) / scale
        _record(result, 'step_assembly', step_gap <= 1e-10, max_relative_gap=step_gap)
        _record(result, 'symmetry', exact.asymmetry() <= self.validation_rules['symmetry'], asymmetry=exact.asymmetry())
        _record(result, 'positive_semidefinite', exact.min_eigenvalue() >= -1e-12, min_eigenvalue=exact.min_eigenvalue())

        if evo.coefficient.kind == "constant":
            a, T = evo.coefficient.base, evo.horizon
            n = np.arange(1, evo.modes + 1, dtype=float)

            def integral(k):
                return -np.expm1(-k * a * T) / (k * a)

            g2, c = control.gain ** 2, control.coupling
            expected = np.diag(g2 * integral(2 * n ** 2))
            expected[0, 0] = g2 * c ** 2 * integral(2.0)
            expected[0, 1] = expected[1, 0] = g2 * c * integral(5.0)
            err = float(np.max(np.abs(exact.matrix - expected)))
            _record(result, 'closed_form', err <= self.validation_rules['gramian_closed_form'], max_abs_error=err)
        else:
            result['warnings'].append("closed-form Gramian entries apply to constant coefficients only")
        return result

    def validate_resolvent(self, problem, rng):
        result = _result('resolvent')
        grid = problem.grid
        psi = problem.context.gramian
        lambdas = np.logspace(-6, 3, 10)
        worst_ratio = 0.0
        worst_residual = 0.0
        tol = problem.context.newton_tolerance
        for _ in range(5):
            h = ModeVector(rng.normal(size=problem.modes) / np.arange(1, problem.modes + 1))
            norm_h = float(lp_norm_values(modes_to_values(h.coeffs, grid), grid.weights, grid.p))
            for lam in lambdas:
                solution = resolvent_solve(lam, psi, h, grid, tolerance=tol, max_iter=problem.context.newton_max_iter)
                norm_z = float(lp_norm_values(modes_to_values(solution.z.coeffs, grid), grid.weights, grid.p))
                worst_ratio = max(worst_ratio, norm_z / norm_h)
                worst_residual = max(worst_residual, solution.residual)
        _record(result, 'contraction', worst_ratio <= 1.0 + self.validation_rules['resolvent_bound'], max_ratio=worst_ratio)
        _record(result, 'residual', worst_residual <= max(tol, 1e-12) * 10, max_residual=worst_residual)

        hilbert = grid.with_exponent(2.0)
        h = ModeVector(rng.normal(size=problem.modes))
        direct = resolvent_solve(0.1, psi, h, hilbert, method="direct")
        newton = resolvent_solve(0.1, psi, h, hilbert, method="newton", initial="data", tolerance=1e-13)
        agreement = float(np.max(np.abs(direct.z.coeffs - newton.z.coeffs)))
        _record(result, 'newton_matches_direct', agreement <= self.validation_rules['newton_agreement'], max_gap=agreement)

        zero_psi = GramianMatrix(np.zeros_like(psi.matrix), psi.horizon, psi.coefficient)
        degenerate = resolvent_solve(0.3, zero_psi, h, grid)
        gap = float(np.max(np.abs(degenerate.z.coeffs - h.coeffs)))
        _record(result, 'zero_gramian_returns_data', gap <= 1e-14 * max(1.0, h.norm()), max_gap=gap)
        return result

    def validate_phase_space(self, problem, rng):
        result = _result('phase_space')
        phi = problem.phi
        grid = problem.grid
        thetas = phi.thetas
        smooth = np.sin(np.outer(np.arange(1, 4), grid.nodes))
        pieces = []
        for _ in range(2):
            weights = rng.normal(size=(thetas.size, 3)) * np.exp(0.3 * thetas)[:, None]
            pieces.append(HistorySegment(thetas, weights @ smooth, grid, phi.nu))
        first, second = pieces
        exchanged, direct = bg_norm(first), bg_norm_direct(first)
        gap = _relative(exchanged, direct)
        _record(result, 'exchanged_vs_direct', gap <= self.validation_rules['bg_cross_check'], relative_gap=gap)
        _record(result, 'homogeneity', _relative(bg_norm(first.scaled(-2.5)), 2.5 * exchanged) <= 1e-12)
        _record(result, 'subadditivity', bg_norm(first.combined(second)) <= exchanged + bg_norm(second) + 1e-12)
        lengths = np.linspace(0.0, phi.window, 7)
        norms = [segment_norm(first, r) for r in lengths]
        _record(result, 'segment_norm_monotone', bool(np.all(np.diff(norms) >= -1e-14)))

        x = free_trajectory(problem)
        checks = [check_history_growth(x, phi, t) for t in np.linspace(0.0, problem.horizon, 100)]
        failures = [c['t'] for c in checks if not c['holds']]
        _record(result, 'history_growth', not failures, f"history growth bound violated at t={failures}",
                min_margin=min(c['margin'] for c in checks))
        return result

    def validate_inclusion(self, problem, rng):
        result = _result('inclusion')
        spec = problem.inclusion
        grid = problem.grid
        x = free_trajectory(problem)
        times = x.times
        lower = nemytskii(x, problem.phi, spec, SelectionPolicy('lower'))
        upper = nemytskii(x, problem.phi, spec, SelectionPolicy('upper'))
        chosen = nemytskii(x, problem.phi, spec, problem.policy)
        inside = bool(np.all(chosen.values >= lower.values - 1e-15) and np.all(chosen.values <= upper.values + 1e-15))
        _record(result, 'membership', inside)
        gamma = spec.gamma(times, grid.p)
        bound_ok = bool(np.all(chosen.norms() <= gamma * (1.0 + 1e-12) + 1e-15))
        _record(result, 'gamma_bound', bound_ok, max_ratio=float(np.max(chosen.norms() / np.maximum(gamma, 1e-300))))
        integral = np.sum(grid.weights * np.abs(chosen.values) ** grid.p, axis=1)
        _record(result, 'integral_bound', bool(np.all(integral <= spec.integral_bound(times, grid.p) * (1 + 1e-12) + 1e-15)))
        alpha = rng.uniform()
        other = nemytskii(x, problem.phi, spec, SelectionPolicy('seeded_random', seed=self.seed))
        mixture = SelectionPath(times, alpha * chosen.values + (1 - alpha) * other.values, grid)
        convex = bool(np.all(mixture.values >= lower.values - 1e-15) and np.all(mixture.values <= upper.values + 1e-15))
        _record(result, 'convexity', convex)

        v = StateVector(np.sin(grid.nodes), grid)
        dv = StateVector(np.sin(grid.nodes) + 1e-6 * np.cos(3 * grid.nodes), grid)
        a = evaluate_F_delayed(0.0, v, spec)
        b = evaluate_F_delayed(0.0, dv, spec)
        change = float(max(np.max(np.abs(a.lo.values - b.lo.values)), np.max(np.abs(a.hi.values - b.hi.values))))
        _record(result, 'continuity', change <= 2e-6 * max(1.0, float(spec.weight.value(0.0))), max_change=change)
        return result

    def validate_impulses(self, problem, rng):
        result = _result('impulses')
        grid = problem.grid
        impulses = list(problem.impulses.impulses) or [Impulse.separable(0.5 * problem.horizon, grid, scale=1.0 / np.pi)]
        for k, impulse in enumerate(impulses):
            worst = 0.0
            periodic = 0.0
            for _ in range(20):
                x = rng.normal(size=grid.points) * 3.0
                out = impulse.apply_values(x)
                worst = max(worst, float(lp_norm_values(out, grid.weights, grid.p)))
                shifted = impulse.apply_values(x + 2 * np.pi * rng.integers(-3, 4, size=grid.points))
                periodic = max(periodic, float(np.max(np.abs(shifted - out))))
            _record(result, f'bound_{k}', worst <= impulse.bound * (1 + 1e-12), observed=worst, bound=impulse.bound)
            _record(result, f'periodicity_{k}', periodic <= 1e-10 * max(1.0, impulse.bound), max_gap=periodic)
        return result

    def validate_unique_continuation(self, problem, rng):
        evo = problem.propagators.evolution
        control = problem.context.control
        samples = max(problem.modes, problem.unique_samples)
        report = unique_continuation_check(evo.horizon, evo.coefficient, evo.modes, samples,
                                           control, problem.singular_floor)
        result = _result('unique_continuation')
        _record(result, 'trivial_kernel', report['is_valid'], report['errors'][0] if report['errors'] else None,
                smallest_singular_value=report['smallest_singular_value'], floor=report['floor'])
        return result

    def validate_solver(self, problem, rng):
        result = _result('solver')
        grid = problem.grid
        evo = problem.propagators.evolution
        prop = problem.propagators
        modes = problem.modes
        times = prop.time_grid.times

        phi = build_history('mode', grid, problem.phi.nu, problem.inclusion.delay, window=problem.phi.window, mode=1)
        trivial = InclusionSpec('zero', delay=problem.inclusion.delay)
        decay = integrate_mild(phi, None, trivial, problem.policy, None, prop)
        expected = np.exp(-evo.mu_array(np.zeros_like(times), times))
        x0 = decay.coeffs[0, 0]
        err = float(np.max(np.abs(decay.coeffs[:, 0] - x0 * expected)))
        _record(result, 'homogeneous_decay', err <= self.validation_rules['decay'], max_abs_error=err)

        forcing = (np.sin(3 * times)[:, None] * modes_to_values(np.eye(modes)[0], grid)[None, :]
                   + np.cos(2 * times)[:, None] * modes_to_values(np.eye(modes)[1], grid)[None, :])
        selection = SelectionPath(times, forcing, grid)
        x = integrate_mild(phi, None, trivial, problem.policy, None, prop, selection=selection)
        oracle = mild_global_formula(phi, None, selection.modes(modes), x, None, evo, None, evo.horizon)
        gap = float(np.linalg.norm(oracle - x.terminal) / max(np.linalg.norm(oracle), 1e-300))
        _record(result, 'global_formula', gap <= self.validation_rules['global_formula'], relative_gap=gap)

        ratio = self.refinement_ratio(evo, phi, trivial, problem.policy, steps=max(prop.steps // 8, 8))
        lo, hi = self.validation_rules['order_ratio']
        _record(result, 'second_order', lo <= ratio <= hi, ratio=ratio)
        return result

    def refinement_ratio(self, evolution, phi, spec, policy, steps):
        """Ratio of successive terminal changes under step halving for a smooth forcing"""
        grid = phi.grid
        modes = evolution.modes
        terminals = []
        for level in range(3):
            tg = TimeGrid(evolution.horizon, steps * 2 ** level)
            prop = StepPropagators(evolution, tg)
            t = tg.times
            forcing = np.sin(4 * t)[:, None] * modes_to_values(np.eye(modes)[0], grid)[None, :]
            x = integrate_mild(phi, None, spec, policy, None, prop, selection=SelectionPath(t, forcing, grid))
            terminals.append(x.terminal)
        first = np.linalg.norm(terminals[0] - terminals[1])
        second = np.linalg.norm(terminals[1] - terminals[2])
        return float(first / max(second, 1e-300))

    def validate_steering(self, problem, rng):
        result = _result('steering')
        control = problem.context.control
        worst = 0.0
        for _ in range(100):
            u = ControlVector(rng.normal(size=problem.modes - 1))
            xs = ModeVector(rng.normal(size=problem.modes))
            lhs = float(control.apply_B(u).coeffs @ xs.coeffs)
            rhs = float(u.coeffs @ control.apply_B_star(xs).coeffs)
            worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
        _record(result, 'adjointness', worst <= 1e-12, max_residual=worst)

        diag = np.diag(problem.context.gramian.matrix)[2:]
        lam = np.array(problem.lambdas)
        factors = lam[:, None] / (lam[:, None] + diag[None, :])
        monotone = bool(np.all(np.diff(factors, axis=0) < 0)) if lam.size > 1 else True
        _record(result, 'monotone_factor', monotone)

        lam0 = problem.lambdas[0]
        _, _, report = steering_iteration(lam0, problem)
        limit = self.validation_rules['terminal_identity_factor'] * problem.tolerance
        if report.converged:
            _record(result, 'terminal_identity', report.terminal_identity_residual <= limit,
                    residual=report.terminal_identity_residual, limit=limit)
        else:
            result['warnings'].append(f"steering at lambda={lam0} did not converge in {report.iterations} iterations")
        _record(result, 'control_bound', report.control_bound['holds'], margin=report.control_bound['margin'])
        _record(result, 'orbit_bound', report.orbit_bound['holds'], margin=report.orbit_bound['margin'])
        _record(result, 'history_growth', report.growth_check['all_hold'], min_margin=report.growth_check['min_margin'])
        return result


def get_validation_framework(seed=0, samples=1000, logger=None):
    """Factory function to get validation framework instance"""
    return ValidationFramework(seed, samples, logger)
