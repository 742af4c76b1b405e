"""CSV records, event logs, run summaries and generated plot scripts.

Every file is written to a temporary sibling first and moved into place, so
a reader never sees a half-written file.
"""

import csv
import io
import json
import math
import os
import tempfile

import numpy as np

from .sim import RecordRow

# (field, unit); complex fields become _re/_im column pairs
FIELD_UNITS = {
    "t": "s",
    "inverter": "-",
    "v_pos": "pu",
    "v_neg": "pu",
    "i_pos": "pu",
    "i_neg": "pu",
    "i_maxphase": "pu",
    "p": "pu",
    "q": "pu",
    "p_virtual": "pu",
    "theta_rel": "rad",
    "omega": "rad/s",
    "mu": "-",
    "v_lambda_mag": "pu",
    "mode": "-",
}
COMPLEX_FIELDS = ("v_pos", "v_neg", "i_pos", "i_neg")
assert tuple(FIELD_UNITS) == RecordRow._fields


def csv_columns() -> list:
    cols = []
    for name, unit in FIELD_UNITS.items():
        if name in COMPLEX_FIELDS:
            cols += [f"{name}_re [{unit}]", f"{name}_im [{unit}]"]
        else:
            cols.append(f"{name} [{unit}]")
    return cols


def _num(x) -> str:
    # repr is the shortest string that round-trips, so output is reproducible
    return repr(float(x))


def _cells(row: RecordRow) -> list:
    out = []
    for name in RecordRow._fields:
        v = getattr(row, name)
        if name in COMPLEX_FIELDS:
            out += [_num(v.real), _num(v.imag)]
        elif name == "inverter":
            out.append(str(v))
        elif name == "mode":
            out.append(v)
        else:
            out.append(_num(v))
    return out


def atomic_write(path, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def records_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(csv_columns())
    for r in rows:
        if any(isinstance(v, float) and not math.isfinite(v) for v in (r.t, r.i_maxphase, r.p, r.q, r.omega)):
            raise ValueError(f"non-finite value in record at t={r.t}")
        w.writerow(_cells(r))
    return buf.getvalue()


def write_records(path, rows):
    atomic_write(path, records_csv(rows))


def read_records(path) -> list:
    """Parse a records CSV back into RecordRow tuples."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != csv_columns():
            raise ValueError(f"{path}: unexpected header")
        rows = []
        for cells in reader:
            it = iter(cells)
            vals = []
            for name in RecordRow._fields:
                if name in COMPLEX_FIELDS:
                    vals.append(complex(float(next(it)), float(next(it))))
                elif name == "inverter":
                    vals.append(int(next(it)))
                elif name == "mode":
                    vals.append(next(it))
                else:
                    vals.append(float(next(it)))
            rows.append(RecordRow(*vals))
    return rows


def events_csv(events) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["t [s]", "kind", "detail"])
    for t, kind, detail in events:
        w.writerow([_num(t), kind, detail])
    return buf.getvalue()


def write_table(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_num(v) if isinstance(v, float) else v for v in row])
    atomic_write(path, buf.getvalue())


# --- summaries ------------------------------------------------------------


def fault_windows(world):
    return [(f.t_on, f.t_clear) for f in world.faults]


def summarize(result, settle_window: float = 1.0, omega_tol: float = 0.05, angle_tol: float = 0.05) -> dict:
    """Per-run metrics used by ``run`` and ``sweep``.

    An inverter counts as settled when over the last ``settle_window``
    seconds its frequency stays within ``omega_tol`` rad/s of the final value
    and its relative angle moves less than ``angle_tol`` rad.
    """
    world = result.world
    n_inv = len(world.models) if world is not None else 0
    out = {"status": result.status, "message": result.message, "runtime_s": round(result.runtime, 3), "inverters": []}
    settled_all = result.status == "ok"
    windows = fault_windows(world) if world is not None else []
    for n in range(n_inv):
        t = result.series("t", n)
        if not len(t):
            continue
        i = result.series("i_maxphase", n)
        th = result.series("theta_rel", n)
        om = result.series("omega", n)
        tail = t >= t[-1] - settle_window
        in_fault = np.zeros_like(t, dtype=bool)
        for a, b in windows:
            in_fault |= (t >= a) & (t < b)
        w0 = world.models[n].params.omega0
        settled = bool(
            result.status == "ok"
            and np.ptp(th[tail]) < angle_tol
            and np.max(np.abs(om[tail] - om[-1])) < omega_tol
            and abs(om[-1] - w0) < omega_tol
        )
        settled_all &= settled
        out["inverters"].append(
            {
                "name": world.models[n].spec.name,
                "max_current": float(np.max(i)),
                "max_current_fault": float(np.max(i[in_fault])) if in_fault.any() else None,
                "final_current": float(i[-1]),
                "final_angle": float(th[-1]),
                "final_omega_dev": float(om[-1] - w0),
                "settled": settled,
            }
        )
    out["settled"] = bool(settled_all and n_inv > 0)
    if result.status != "ok":
        out["verdict"] = result.status
    else:
        out["verdict"] = "settled" if out["settled"] else "unsettled"
    return out


def write_summary(path, summary: dict):
    atomic_write(path, json.dumps(summary, indent=2, sort_keys=True) + "\n")


PLOT_TEMPLATE = '''"""Plot {name}: run with python3 after installing matplotlib."""
import csv
import os
import sys

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
path = sys.argv[1] if len(sys.argv) > 1 else os.path.join(here, "records.csv")
with open(path, newline="") as fh:
    rows = list(csv.DictReader(fh))
panels = [
    ("i_maxphase [pu]", "max phase current [pu]"),
    ("p [pu]", "p [pu]"),
    ("q [pu]", "q [pu]"),
    ("theta_rel [rad]", "angle [rad]"),
    ("omega [rad/s]", "frequency [rad/s]"),
    ("v_lambda_mag [pu]", "|v_lambda| [pu]"),
]
fig, axes = plt.subplots(len(panels), 1, sharex=True, figsize=(8, 12))
for inv in sorted({{r["inverter [-]"] for r in rows}}):
    sel = [r for r in rows if r["inverter [-]"] == inv]
    t = [float(r["t [s]"]) for r in sel]
    for ax, (col, label) in zip(axes, panels):
        ax.plot(t, [float(r[col]) for r in sel], label=f"inverter {{inv}}")
        ax.set_ylabel(label)
axes[0].legend()
axes[-1].set_xlabel("t [s]")
fig.suptitle("{name}")
fig.tight_layout()
out = os.path.join(here, "{name}.png")
fig.savefig(out, dpi=120)
print(out)
'''


def plot_script(name: str) -> str:
    return PLOT_TEMPLATE.format(name=name)


def write_run(out_dir, name, result, effective_config: str) -> dict:
    """Write records, events, summary, effective config and plot script."""
    summary = summarize(result)
    write_records(os.path.join(out_dir, "records.csv"), result.rows)
    atomic_write(os.path.join(out_dir, "events.csv"), events_csv(result.events))
    atomic_write(os.path.join(out_dir, "effective.yaml"), effective_config)
    atomic_write(os.path.join(out_dir, f"plot_{name}.py"), plot_script(name))
    write_summary(os.path.join(out_dir, "summary.json"), {k: v for k, v in summary.items() if k != "runtime_s"})
    return summary
