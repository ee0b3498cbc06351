"""Assumption audit of every built-in scenario next to the expected flags."""
from rotnft.geometry import audit_assumptions
from rotnft.scenarios import get_scenario, registry

keys = ["H3", "IPC", "H4", "H5", "H6"]
print(f"{'scenario':20}" + "".join(f"{k:>6}" for k in keys) + "  as expected")
for name in registry():
    sc = get_scenario(name)
    rep = audit_assumptions(sc.system, sc.constraint, sc.singular)
    row = "".join(f"{'ok' if rep.passes[k] else 'FAIL':>6}" for k in keys)
    print(f"{name:20}{row}  {rep.passes == sc.expected}")
