from prometheus_client import REGISTRY, Counter, Gauge, Histogram, write_to_textfile

# metrics.py
# ------------------------------------------------------------
# Search metrics (names used by tests and the metrics.prom export)
# ------------------------------------------------------------
# NOTE: registered in the default REGISTRY; `write_textfile` dumps it next to
# the run artifacts so node-exporter style collectors can pick it up.

CANDIDATES_EVALUATED = Counter(
    "pisr_candidates_evaluated",
    "Candidates scored by a search driver",
    ["driver"],
    registry=REGISTRY,
)

CANDIDATES_REJECTED = Counter(
    "pisr_candidates_rejected",
    "Candidates rejected before or during scoring",
    ["reason"],
    registry=REGISTRY,
)

CONSTANT_FITS = Counter(
    "pisr_constant_fits",
    "Constant-fitting runs by method and outcome",
    ["method", "outcome"],
    registry=REGISTRY,
)

FIT_LATENCY = Histogram(
    "pisr_fit_latency_seconds",
    "Wall time of one constant fit",
    ["method"],
    registry=REGISTRY,
)

BEST_TOTAL = Gauge(
    "pisr_best_total_loss",
    "Best total loss seen by the most recent search",
    registry=REGISTRY,
)


# ------------------------------------------------------------
# Helpers used by the services. Metrics must never break a search.
# ------------------------------------------------------------

def inc_evaluated(driver: str) -> None:
    try:
        CANDIDATES_EVALUATED.labels(driver=driver).inc()
    except Exception:
        pass


def inc_rejected(reason: str) -> None:
    try:
        CANDIDATES_REJECTED.labels(reason=reason).inc()
    except Exception:
        pass


def inc_fit(method: str, outcome: str) -> None:
    try:
        CONSTANT_FITS.labels(method=method, outcome=outcome).inc()
    except Exception:
        pass


def observe_fit(method: str, outcome: str, seconds: float) -> None:
    """Count a finished fit and record its latency."""
    inc_fit(method, outcome)
    try:
        FIT_LATENCY.labels(method=method).observe(seconds)
    except Exception:
        pass


def set_best_total(value: float) -> None:
    try:
        BEST_TOTAL.set(value)
    except Exception:
        pass


def write_textfile(path) -> None:
    """Write the registry in Prometheus text format to `path`."""
    write_to_textfile(str(path), REGISTRY)
