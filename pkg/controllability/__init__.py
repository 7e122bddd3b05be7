# Numerical steering toolkit for impulsive delayed evolution inclusions
