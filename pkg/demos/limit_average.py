"""Stationary averages of the fast variable, and how the brackets move with delta.

For a reversion function g the fast variable z = X / eps relaxes to the
density proportional to exp(-2 (l/m) G(m z)). This script prints the average
of f(k z) for a few g, next to closed forms where they exist, and then the
lower and upper brackets that the sandwich argument uses.
"""
import math

from fastrevert.model import observable_from_name, reversion_from_name
from fastrevert.quadrature import limit_average, limit_average_bracket, speed_measure_mass

square = observable_from_name("even_power", power=2)

print("average of z^2 under the stationary law (k = l = m = 1)")
cases = [
    ("linear", reversion_from_name("linear"), 0.5),
    ("cubic", reversion_from_name("odd_power", power=3),
     math.sqrt(2) * math.gamma(0.75) / math.gamma(0.25)),
    ("sinh", reversion_from_name("sinh"), None),
]
for name, rf, exact in cases:
    w = limit_average(rf, square, 1.0, 1.0, 1.0)
    ref = "" if exact is None else f"   closed form {exact:.12f}"
    print(f"  {name:7s} {w:.12f}{ref}")

# the brackets close in on w linearly in delta
rf = reversion_from_name("odd_power", power=3)
w = limit_average(rf, square, 1.0, 1.0, 1.0)
print("\nbrackets for cubic g")
print("  delta      lower        w           upper")
for delta in (0.2, 0.1, 0.05, 0.01, 0.001):
    lo = limit_average_bracket(rf, square, 1.0, 1.0, 1.0, delta, "-")
    hi = limit_average_bracket(rf, square, 1.0, 1.0, 1.0, delta, "+")
    print(f"  {delta:<8g} {lo:.8f}  {w:.8f}  {hi:.8f}")

lin = reversion_from_name("linear")
print(f"\nspeed-measure mass, linear g, delta = 0: {speed_measure_mass(lin, 1.0, 1.0, 0.0, '+'):.10f}"
      f" (e sqrt(pi) / 2 = {math.e * math.sqrt(math.pi) / 2:.10f})")
