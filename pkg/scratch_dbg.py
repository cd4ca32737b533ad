import sys
sys.path.insert(0, "tests")
import numpy as np

from eamod import fleet_sim as fs
from eamod.forecast import CountModel
from eamod.nbd import NbdConfig, prepare, forward_pass, backward_pass
from helpers import desk_instance, fleet_at

inst = desk_instance()
fleet = fleet_at(inst, {(0, 4): 2, (1, 3): 1})

m = np.full((4, 2, 2), 0.9)
for i in range(2):
    m[:, i, i] = 0.0
model = CountModel(mean=m, dispersion=np.full((4, 2, 2), 4.0))

st = fs.initial_state(inst, fleet)
demand = np.zeros((2, 2)); demand[0, 1] = 1
fs.step(st, demand, fs.ControllerCommand.zeros(2, 5))

ctrl = fs.OptimizingController(inst, model, "dmp")
tree = ctrl._mean_chain(st.clock, None)
print("tree stages:", [(n.id, n.stage, n.value.demand.tolist()) for n in tree.nodes])
print("backlog:", st.backlog_counts())
print("fleet:", st.fleet_counts())

state = prepare(inst, tree, NbdConfig(),
                initial_fleet=st.fleet_counts(),
                in_transit=st.transit_counts(),
                initial_backlog=st.backlog_counts())
for it in range(6):
    try:
        forward_pass(state)
    except Exception as e:
        print("iter", it, "FORWARD RAISED:", e)
        print("lb so far:", state.lb)
        # re-solve root master manually to inspect
        break
    print(f"iter {it}: lb={state.lb:.12f} ub_trial={state.ub_trial:.12f} "
          f"ub_inc={state.ub_incumbent:.12f}")
    added = backward_pass(state)
    print("   cuts added:", {k: len(v) for k, v in added.items()})
