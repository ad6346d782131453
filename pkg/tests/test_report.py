import csv
import io

from windres.events import METRIC_NAMES
from windres.report import CLASS_NAMES, dumps, table_columns, table_csv


def table(value):
    return {c: {m: value for m in METRIC_NAMES} for c in CLASS_NAMES}


def test_table_shape_and_blanks():
    base = table(2.0)
    base["large"]["restore_rate"] = None
    text = table_csv(base, [("hardening", table(-10.0)), ("faster", table(0.0))], {"seed": 1})
    lines = text.splitlines()
    assert lines[0].startswith("# ")
    rows = list(csv.reader(io.StringIO("\n".join(lines[1:]))))
    assert rows[0] == table_columns(["hardening", "faster"])
    assert len(rows) == 1 + 9 and all(len(r) == 1 + 3 + 3 * 2 for r in rows)
    assert [r[0] for r in rows[1:]] == list(METRIC_NAMES)
    rr = rows[1 + METRIC_NAMES.index("restore_rate")]
    assert rr[3] == "" and rr[4] == "-10.000"


def test_dumps_is_canonical():
    assert dumps({"b": 1, "a": [1.5]}) == '{\n  "a": [\n    1.5\n  ],\n  "b": 1\n}\n'
