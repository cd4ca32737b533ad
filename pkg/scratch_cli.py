"""End-to-end CLI pipeline smoke."""
import json
import os
import sys
import numpy as np

sys.path.insert(0, "src")
from eamod.cli import main
from eamod.seeding import stream

os.makedirs("/tmp/cli", exist_ok=True)
os.chdir("/tmp/cli")

# synthetic trips: 3 hotspots, 2 days, 600 trips
rng = stream(99, "trips")
centers = np.array([[0.0, 0.0], [4.0, 0.5], [1.5, 3.5]])
rows = ["pickup_x,pickup_y,dropoff_x,dropoff_y,epoch_minutes"]
for k in range(600):
    a, b = rng.integers(3), rng.integers(3)
    p = centers[a] + rng.normal(0, 0.25, 2)
    d = centers[b] + rng.normal(0, 0.25, 2)
    minute = int(rng.integers(0, 2 * 1440))
    rows.append(f"{p[0]:.4f},{p[1]:.4f},{d[0]:.4f},{d[1]:.4f},{minute}")
rows.append("bad,row,with,garbage,here")
rows.append("1.0,2.0,3.0")  # short row
open("trips.csv", "w").write("\n".join(rows) + "\n")

rc = main(["ingest", "--trips", "trips.csv", "--stations", "3",
           "--out-instance", "instance.json", "--out-counts", "counts.json",
           "--seed", "5", "--battery", "70", "--soc-bins", "20",
           "--horizon", "6", "--chargers", "3"])
assert rc == 0, rc

rc = main(["fit", "--counts", "counts.json", "--out", "model.json"])
assert rc == 0, rc

rc = main(["tree", "--model", "model.json", "--instance", "instance.json",
           "--out", "tree.json", "--scenarios", "2,2", "--samples", "30",
           "--seed", "5"])
assert rc == 0, rc

rc = main(["solve", "--instance", "instance.json", "--tree", "tree.json",
           "--fleet", "6", "--out", "solution.json", "--ledger", "ledger.csv",
           "--gap-tol", "0.05", "--max-iters", "12"])
assert rc == 0, rc
sol = json.load(open("solution.json"))
print("solution:", sol["termination"], sol["objective"], sol["gap_percent"])
print(open("ledger.csv").read().splitlines()[0])

rc = main(["simulate", "--instance", "instance.json", "--model", "model.json",
           "--out", "report_rb.json", "--controller", "rb", "--steps", "40",
           "--fleet", "6", "--seed", "3", "--price", "peak"])
assert rc == 0, rc
rep = json.load(open("report_rb.json"))
print("rb report served:", rep["served"], "bought:", rep["energy_bought_kwh"])

rc = main(["simulate", "--instance", "instance.json", "--model", "model.json",
           "--out", "report_dmp.json", "--controller", "dmp", "--steps", "6",
           "--fleet", "6", "--seed", "3", "--gap-tol", "0.05",
           "--max-iters", "8"])
assert rc == 0, rc

cfg = {
    "instance": "instance.json", "model": "model.json", "controller": "rb",
    "steps": 30, "seed": 2, "vehicles": ["vehicle1", "vehicle3"],
    "batteries": [40.0, 70.0], "fleets": [6], "chargers": [3], "workers": 2,
}
json.dump(cfg, open("config.json", "w"))
rc = main(["sweep", "--config", "config.json", "--out-dir", "sweep_out"])
assert rc == 0, rc
sweep_text = open("sweep_out/sweep.csv").read()
print("sweep rows:", len(sweep_text.splitlines()) - 1)

# idempotence: rerun sweep, byte-compare
rc = main(["sweep", "--config", "config.json", "--out-dir", "sweep_out2"])
assert rc == 0
assert open("sweep_out2/sweep.csv").read() == sweep_text
assert open("sweep_out2/cycles.csv").read() == open("sweep_out/cycles.csv").read()
print("sweep idempotent")

rc = main(["report", "report_rb.json", "sweep_out/sweep.csv"])
assert rc == 0

# exit codes
rc = main(["fit", "--counts", "missing.json", "--out", "x.json"])
assert rc == 2, rc
print("missing input -> 2 ok")

manifest = json.load(open("report_rb.json.manifest.json"))
assert manifest["version"] and manifest["config_sha256"] and \
    manifest["command"] == "simulate"
print("manifest ok:", sorted(manifest))
print("CLI SMOKE OK")
