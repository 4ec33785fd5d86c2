"""
Watching a performance contract degrade
=======================================

The contract monitor compares each quantum's iteration rate against the
average of all previous *non-violating* quanta.  Excluding violations from
the average keeps the baseline honest: a long slowdown cannot drag the
reference down and mask itself.  Three consecutive violations trigger
remediation (migration, in the full system).
"""

from gridworm.contract import ContractParams, init, observe

params = ContractParams(
    quantum_seconds=1.0,
    degradation_threshold=0.10,   # >10% below the average is a violation
    consecutive_required=3,
)

# Seven healthy quanta at 10 iterations/s, then an external job lands on the
# machine and the rate halves.
rates = [10.0] * 7 + [5.0, 5.0, 5.0, 5.0]

state = init(rates[0], params)
print(f"{'q':>3} {'rate':>6} {'avg':>6} {'degr':>6}  verdict")
v = state.history[0]
print(f"{v.index:>3} {v.rate:>6.1f} {v.average:>6.1f} {v.degradation:>6.2f}  baseline")

for rate in rates[1:]:
    state, v = observe(state, iterations_completed=rate, elapsed=1.0)
    verdict = "VIOLATION" if v.violation else "ok"
    if v.trigger:
        verdict += "  -> TRIGGER: migrate"
    print(f"{v.index:>3} {v.rate:>6.1f} {v.average:>6.1f} {v.degradation:>6.2f}  {verdict}")

# Note the average stays at 10.0 throughout the slowdown -- the violating
# quanta never entered it -- and the trigger fires exactly once, at the
# third consecutive violation, even though the streak keeps growing.
print(f"\nfinal baseline average: {state.average:.1f} iterations/s")
print(f"consecutive violations at end: {state.consecutive_violations}")
