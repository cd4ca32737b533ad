import time
import numpy as np
import sys
sys.path.insert(0, "tests")
from helpers import desk_instance, fleet_at
from eamod import CountModel, NbdConfig, RobustParams
from eamod.fleet_sim import (OptimizingController, TreeConfig, initial_state,
                             controller_rb, simulate)

# --- part A: zero-variance collapse ---
inst = desk_instance(n=3, soc_bins=8, horizon=6, step_minutes=10,
                     fare=6.0, reb_cost=0.3, charge_price=0.5, v2g_price=2.0,
                     chargers=2, charge_gain=2, v2g_drop=2,
                     terminal_a=4.0, terminal_q=0.9)
model0 = CountModel(mean=np.zeros((6, 3, 3)), dispersion=np.full((6, 3, 3), 2.0))
fleet = fleet_at(inst, {(0, 2): 2, (1, 5): 2, (2, 8): 1, (0, 8): 1})
tc = TreeConfig(branch_plan=(2, 2), m_samples=30, seed=3,
                robust=RobustParams.from_instance(inst))
nc = NbdConfig(gap_tol=1e-4, max_iters=40, stall_limit=8)
cmds = {}
for mode in ("smpc", "dmp", "rcc"):
    state = initial_state(inst, fleet, seed=5)
    ctl = OptimizingController(inst, model0, mode, tc, nc)
    cmds[mode] = ctl(state)
a, b, c = cmds["smpc"], cmds["dmp"], cmds["rcc"]
same = all(np.array_equal(getattr(a, f), getattr(b, f)) and
           np.array_equal(getattr(a, f), getattr(c, f))
           for f in ("pax", "reb", "charge", "v2g"))
nonzero = int(a.charge.sum() + a.v2g.sum() + a.reb.sum())
print("collapse identical:", same, "| nonzero commands:", nonzero)
print("charge total", int(a.charge.sum()), "v2g", int(a.v2g.sum()),
      "reb", int(a.reb.sum()))

# --- part B: surge ---
def surge_setup():
    inst = desk_instance(n=3, soc_bins=10, horizon=6, step_minutes=10,
                         battery_kwh=70.0, travel_steps=2, energy_bins=1,
                         fare=6.0, reb_cost=0.3, charge_price=0.5,
                         v2g_price=0.4, chargers=2, charge_gain=2, v2g_drop=2)
    nb = 48
    mean = np.full((nb, 3, 3), 0.25)
    for i in range(3):
        mean[:, i, i] = 0.0
    mean[10:13, 2, :] *= 5.0
    mean[10:13, 2, 2] = 0.0
    model = CountModel(mean=mean, dispersion=np.full((nb, 3, 3), 2.0))
    fleet = fleet_at(inst, {(0, 10): 3, (1, 10): 3, (2, 10): 3})
    return inst, model, fleet

for seed in range(6):
    inst, model, fleet = surge_setup()
    t0 = time.time()
    rb = simulate(inst, controller_rb, model, steps=30, seed=seed,
                  initial_fleet=fleet)
    ctl = OptimizingController(inst, model, "smpc",
                               TreeConfig(branch_plan=(2,), m_samples=20, seed=1),
                               NbdConfig(gap_tol=1e-2, max_iters=15,
                                         stall_limit=4, time_limit_s=10.0))
    sm = simulate(inst, ctl, model, steps=30, seed=seed, initial_fleet=fleet)
    dt = time.time() - t0
    print(f"seed={seed}: rb wait95={rb.report['wait_p95_s']} "
          f"smpc wait95={sm.report['wait_p95_s']} "
          f"rb served={rb.report['served']} smpc served={sm.report['served']} "
          f"({dt:.1f}s)")
