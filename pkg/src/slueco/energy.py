"""Training-energy accounting: meters, CO2 conversion and kWh per CER point."""

import functools
import json
import math
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

from slueco.exceptions import ConstraintError, DomainError

GCO2_PER_KWH = 51
JOULES_PER_KWH = 3.6e6


@functools.total_ordering
class _Unbounded:
    """Marks a costlier run that is not better than its baseline."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INF"

    def __str__(self):
        return "inf"

    def __float__(self):
        return math.inf

    def __eq__(self, other):
        return other is self

    def __lt__(self, other):
        return False

    def __hash__(self):
        return hash("slueco.INF")

    def __reduce__(self):
        return (_Unbounded, ())


INF = _Unbounded()


@dataclass
class RunRecord:
    run_id: str
    strategy: str
    feature_family: str
    kwh: float
    wall_time_s: float = 0.0
    dev_cer: float = 0.0
    test_cer: float = 0.0
    corpus: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kwh < 0:
            raise DomainError(f"{self.run_id}: kwh must be >= 0, got {self.kwh}")
        if self.dev_cer < 0 or self.test_cer < 0:
            raise DomainError(f"{self.run_id}: error rates must be >= 0")

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, line):
        return cls(**json.loads(line))


def kwh_to_gco2(kwh):
    """Grams of CO2 for ``kwh``, rounded to the nearest gram (half rounds up)."""
    if kwh < 0:
        raise DomainError(f"negative energy {kwh}")
    return int(math.floor(GCO2_PER_KWH * kwh + 0.5))


def select_baseline(records, family, corpus=None):
    """Cheapest run of ``family`` (optionally restricted to one corpus).

    Ties on energy go to the lower test CER, then the smaller run id.
    """
    pool = [
        r for r in records
        if r.feature_family == family and (corpus is None or r.corpus == corpus)
    ]
    if not pool:
        raise LookupError(f"no run with feature family {family!r}")
    return min(pool, key=lambda r: (r.kwh, r.test_cer, r.run_id))


def kwh_per_point(mc, me):
    """Extra kWh paid by ``mc`` per CER point it gains over the cheaper ``me``.

    Returns :data:`INF` when ``mc`` is not better than ``me`` on test CER.
    """
    if mc.kwh < me.kwh:
        raise ConstraintError(
            f"compared run {mc.run_id!r} ({mc.kwh} kWh) is cheaper than baseline "
            f"{me.run_id!r} ({me.kwh} kWh)"
        )
    if mc is me or (mc.kwh == me.kwh and mc.test_cer == me.test_cer):
        return 0.0
    if mc.test_cer >= me.test_cer:
        return INF
    return (mc.kwh - me.kwh) / (me.test_cer - mc.test_cer)


class EnergyMeter:
    """Stand-in for an external power meter.

    ``simulated`` charges a constant draw of ``power_watts`` for the measured
    wall time. ``recorded`` returns an externally measured total.
    """

    def __init__(self, mode="simulated", power_watts=None, kwh=None, clock=time.perf_counter):
        if mode == "simulated":
            if power_watts is None or not power_watts > 0:
                raise DomainError("simulated meter needs power_watts > 0")
        elif mode == "recorded":
            if kwh is None or kwh < 0:
                raise DomainError("recorded meter needs kwh >= 0")
        else:
            raise ValueError(f"unknown meter mode {mode!r}")
        self.mode = mode
        self.power_watts = power_watts
        self.kwh = kwh
        self.clock = clock
        self._active = False

    @classmethod
    def simulated(cls, power_watts, **kw):
        return cls("simulated", power_watts=power_watts, **kw)

    @classmethod
    def recorded(cls, kwh):
        return cls("recorded", kwh=kwh)

    @classmethod
    def parse(cls, spec):
        """Build a meter from ``simulated:WATTS`` or ``recorded:KWH``."""
        mode, _, value = spec.partition(":")
        try:
            number = float(value)
        except ValueError:
            raise ValueError(f"bad meter spec {spec!r}") from None
        if mode == "simulated":
            return cls.simulated(number)
        if mode == "recorded":
            return cls.recorded(number)
        raise ValueError(f"bad meter spec {spec!r}")

    def describe(self):
        if self.mode == "simulated":
            return f"simulated:{self.power_watts:g}"
        return f"recorded:{self.kwh:g}"

    def energy_for(self, seconds):
        if self.mode == "recorded":
            return self.kwh
        return seconds * self.power_watts / JOULES_PER_KWH

    @contextmanager
    def session(self):
        """Meter the enclosed block; the yielded dict gets ``seconds`` and ``kwh`` on exit."""
        if self._active:
            raise RuntimeError("meter sessions do not nest")
        self._active = True
        reading = {"seconds": 0.0, "kwh": 0.0}
        start = self.clock()
        try:
            yield reading
        finally:
            reading["seconds"] = self.clock() - start
            reading["kwh"] = self.energy_for(reading["seconds"])
            self._active = False


def meter_session(meter, fn):
    """Run ``fn()`` under ``meter`` and return the kWh charged."""
    with meter.session() as reading:
        fn()
    return reading["kwh"]


@dataclass
class ReportRow:
    record: RunRecord
    gco2: int
    is_baseline: bool
    kwh_per_point: object  # float, INF, or None for the baseline


def build_report(records):
    """Attach gCO2 and kWh/p to each record.

    Baselines are chosen per (corpus, feature family); rows keep input order.
    """
    baselines = {}
    for r in records:
        key = (r.corpus, r.feature_family)
        if key not in baselines:
            baselines[key] = select_baseline(records, r.feature_family, corpus=r.corpus)
    rows = []
    for r in records:
        me = baselines[(r.corpus, r.feature_family)]
        if r is me:
            rows.append(ReportRow(r, kwh_to_gco2(r.kwh), True, None))
        else:
            rows.append(ReportRow(r, kwh_to_gco2(r.kwh), False, kwh_per_point(r, me)))
    return rows


COLUMNS = ("Strategy", "Input", "kWh (gCO2)", "kWh/p", "Time", "DEV", "TEST")


def format_duration(seconds):
    seconds = int(round(seconds))
    h, rest = divmod(seconds, 3600)
    m, s = divmod(rest, 60)
    return f"{h}h{m:02d}'{s:02d}\""


def _kwh_p_cell(row):
    if row.is_baseline:
        return "M_e"
    if row.kwh_per_point is INF:
        return "inf"
    return f"{row.kwh_per_point:.3f}"


def render_table(rows):
    cells = [COLUMNS]
    for row in rows:
        r = row.record
        cells.append((
            r.strategy,
            r.feature_family,
            f"{r.kwh:.3f} ({row.gco2})",
            _kwh_p_cell(row),
            format_duration(r.wall_time_s),
            f"{r.dev_cer:.2f}",
            f"{r.test_cer:.2f}",
        ))
    widths = [max(len(c[i]) for c in cells) for i in range(len(COLUMNS))]
    lines = [" | ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() for line in cells]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_records(rows):
    out = []
    for row in rows:
        d = asdict(row.record)
        d["gco2"] = row.gco2
        d["baseline"] = row.is_baseline
        d["kwh_per_point"] = None if row.is_baseline else (
            "inf" if row.kwh_per_point is INF else round(row.kwh_per_point, 6)
        )
        out.append(json.dumps(d, sort_keys=True, ensure_ascii=False))
    return "".join(line + "\n" for line in out)
