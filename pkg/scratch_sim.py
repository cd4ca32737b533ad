"""Smoke trace for fleet_sim."""
import sys
sys.path.insert(0, "tests")

import numpy as np

from eamod import fleet_sim as fs
from eamod.forecast import CountModel
from eamod.nbd import NbdConfig
from helpers import desk_instance, fleet_at

inst = desk_instance()
fleet = fleet_at(inst, {(0, 4): 2, (1, 3): 1})

# 1) zero demand + zero command -> only the clock moves
st = fs.initial_state(inst, fleet, seed=1)
before = st.fleet_counts().copy()
fs.step(st, np.zeros((2, 2)), fs.ControllerCommand.zeros(2, 5))
assert st.clock == 1 and st.steps_run == 1
assert np.array_equal(st.fleet_counts(), before)
assert st.queued() == 0 and not st.violations
print("no-op step ok")

# 2) passenger waits two steps then dispatch: wait = 2 * 15 * 60 s
st = fs.initial_state(inst, fleet, seed=1)
dem = np.zeros((2, 2)); dem[0, 1] = 1
fs.step(st, dem, fs.ControllerCommand.zeros(2, 5))        # arrives t=0
fs.step(st, np.zeros((2, 2)), fs.ControllerCommand.zeros(2, 5))
cmd = fs.ControllerCommand.zeros(2, 5)
cmd.pax[0, 1, 4] = 1
fs.step(st, np.zeros((2, 2)), cmd)                        # dispatched t=2
assert st.queued() == 0
assert st.ledgers.wait_samples_s == [2 * 15 * 60.0]
# travel_steps=1 -> lands same step, commandable at t=3
fc = st.fleet_counts()
assert fc[1, 3] == 2, fc   # arrived at station 1 having burned 1 bin
assert st.ledgers.consumed_kwh == 10.0  # 1 bin of a 40 kWh / 4 bin pack
assert st.ledgers.km_by_activity["pax"] == 1.0
print("pax dispatch ok")

# 3) charge arithmetic example: 40 kWh pack, 10 min step, 100 kW at 30% SoC
inst50 = desk_instance(n=1, soc_bins=50, horizon=3, step_minutes=10,
                       battery_kwh=40.0, chargers=1, v2g_drop=0)
inst50.charge_kw[:] = 100.0
st = fs.initial_state(inst50, fleet_at(inst50, {(0, 15): 1}), seed=0)
cmd = fs.ControllerCommand.zeros(1, 51)
cmd.charge[0, 15] = 1
fs.step(st, np.zeros((1, 1)), cmd, price_kwh=0.06)
v = st.vehicles[0]
assert v.soc == 15 + 21, v.soc
assert abs(st.ledgers.bought_kwh - 100.0 * 10 / 60) < 1e-9
assert abs(st.ledgers.cost_paid_eur - (100.0 * 10 / 60) * 0.06) < 1e-12
print("charge arithmetic ok:", v.soc, st.ledgers.bought_kwh)

# 4) v2g example: 22 kW, 10 min -> 5 bins on a 40/50 pack? bin=0.8, 22*(1/6)=3.67 kWh -> ceil(3.67/0.8)=5
inst_v = desk_instance(n=1, soc_bins=50, horizon=3, step_minutes=10,
                       battery_kwh=40.0, chargers=1)
inst_v.v2g_kw = 22.0
st = fs.initial_state(inst_v, fleet_at(inst_v, {(0, 40): 1}), seed=0)
cmd = fs.ControllerCommand.zeros(1, 51)
cmd.v2g[0, 40] = 1
fs.step(st, np.zeros((1, 1)), cmd, price_kwh=0.06, sell_price_kwh=0.10)
v = st.vehicles[0]
assert inst_v.v2g_drop_bins() == 5, inst_v.v2g_drop_bins()
assert v.soc == 35, v.soc
assert abs(st.ledgers.sold_kwh - 22.0 / 6) < 1e-9
assert abs(st.ledgers.v2g_revenue_eur - (22.0 / 6) * 0.10) < 1e-12
print("v2g arithmetic ok")

# 5) RB controller: low vehicle charges with hysteresis, passengers served
inst_rb = desk_instance(chargers=1)
st = fs.initial_state(inst_rb, fleet_at(inst_rb, {(0, 0): 1, (0, 4): 1}), seed=2)
cmd = fs.controller_rb(st)
assert cmd.charge[0, 0] == 1 and cmd.charge.sum() == 1  # 0.0 < 0.2 starts
assert cmd.pax.sum() == 0
fs.step(st, np.zeros((2, 2)), cmd)
veh = next(v for v in st.vehicles if v.soc == 1)
assert veh.activity == fs.ACT_CHARGE
cmd = fs.controller_rb(st)
assert cmd.charge[0, 1] == 1  # 0.25 >= 0.2 but continues to 0.8
dem = np.zeros((2, 2)); dem[0, 1] = 1
fs.step(st, dem, cmd)
cmd = fs.controller_rb(st)
assert cmd.pax[0, 1, 4] == 1  # highest-soc vehicle serves
print("rb hysteresis ok")

# 6) closed-loop RB sim, conservation + determinism
model = CountModel(mean=np.full((4, 2, 2), 0.6), dispersion=np.full((4, 2, 2), 5.0))
r1 = fs.simulate(inst, fs.controller_rb, model, steps=200, seed=7,
                 initial_fleet=fleet, energy_cv=0.1)
r2 = fs.simulate(inst, fs.controller_rb, model, steps=200, seed=7,
                 initial_fleet=fleet, energy_cv=0.1)
assert r1.report == r2.report
assert r1.report["vehicles"] == 3
n_total = sum(1 for v in r1.state.vehicles)
assert n_total == 3
print("rb sim ok:", {k: r1.report[k] for k in
                     ("served", "still_waiting", "wait_median_s",
                      "energy_bought_kwh", "violations")})

# 7) energy closure: bought - sold - consumed ~= battery delta, within
#    one bin-quantum per soc event
led = r1.state.ledgers
start_kwh = float((np.arange(5) * inst.bin_kwh * fleet).sum())
end_kwh = sum(v.soc * inst.bin_kwh for v in r1.state.vehicles) \
    + sum(v.pending_drop * 0 for v in r1.state.vehicles)
# in-transit pending drops not yet applied; treat current soc as-is and add
# the pending kwh back to 'consumed later'
pending = sum(v.pending_kwh for v in r1.state.vehicles if v.in_transit)
lhs = led.bought_kwh - led.sold_kwh - led.consumed_kwh - pending
rhs = end_kwh - start_kwh - sum(v.pending_drop * inst.bin_kwh
                                for v in r1.state.vehicles if v.in_transit)
slack = abs(lhs - rhs)
print("closure slack:", slack, "events:", led.soc_events,
      "budget:", led.soc_events * inst.bin_kwh)
assert slack <= led.soc_events * inst.bin_kwh + 1e-9

# 8) optimizing controller (dmp) smoke: a few closed-loop steps
model_s = CountModel(mean=np.full((4, 2, 2), 0.4), dispersion=np.full((4, 2, 2), 5.0))
ctrl = fs.OptimizingController(inst, model_s, "dmp",
                               nbd_config=NbdConfig(max_iters=10, gap_tol=1e-3))
res = fs.simulate(inst, ctrl, model_s, steps=6, seed=3, initial_fleet=fleet)
print("dmp sim ok:", {k: res.report[k] for k in ("served", "still_waiting",
                                                 "violations")})
assert not ctrl.fallback_steps

# 9) smpc all-ones plan == dmp command on the same state
st_a = fs.initial_state(inst, fleet, seed=5)
st_b = fs.initial_state(inst, fleet, seed=5)
dem = np.zeros((2, 2)); dem[0, 1] = 1; dem[1, 0] = 1
for s in (st_a, st_b):
    fs.step(s, dem, fs.ControllerCommand.zeros(2, 5))
cfg = fs.TreeConfig(branch_plan=(1, 1))
c_dmp = fs.OptimizingController(inst, model_s, "dmp",
                                nbd_config=NbdConfig(max_iters=10))
c_smpc = fs.OptimizingController(inst, model_s, "smpc", tree_config=cfg,
                                 nbd_config=NbdConfig(max_iters=10))
cmd_a = c_dmp(st_a)
cmd_b = c_smpc(st_b)
for name in ("pax", "reb", "charge", "v2g"):
    assert np.array_equal(getattr(cmd_a, name), getattr(cmd_b, name)), name
print("smpc degenerate == dmp ok")

# 10) rcc quantile chain runs
c_rcc = fs.OptimizingController(inst, model_s, "rcc",
                                nbd_config=NbdConfig(max_iters=10))
cmd_c = c_rcc(fs.initial_state(inst, fleet, seed=5))
print("rcc ok, pax:", cmd_c.pax.sum())

print("ALL SMOKE OK")
