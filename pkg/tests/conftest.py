import pytest

from faultlab.config import config_from_dict


def two_tier_raw(*, fallback=True, sampling=2.0, duration=60,
                 delay=120, rate=300, seed=7, cluster_size=20,
                 store_path=None, clock="2026-08-11T12:00:00",
                 background_error_rate=0.0, regions=None):
    raw = {
        "topology": {
            "edge_service": "api",
            "services": [
                {"name": "api", "vip": "api", "cluster_size": cluster_size,
                 "base_latency": {"median_ms": 2, "sigma": 0.2},
                 "dynamic_properties": {"timeout.ms": "800", "pool.size": "10"},
                 "handlers": [{"name": "play", "deps": ["GetB"], "kpi": "sps",
                               "background_error_rate": background_error_rate}],
                 "commands": [{"name": "GetB", "timeout_ms": 800,
                               "fallback": {"present": fallback},
                               "wraps": ["b"]}],
                 "clients": [{"name": "b", "target_vip": "b",
                              "per_try_timeout_ms": 600, "retries": 1}]},
                {"name": "b", "vip": "b", "cluster_size": 5,
                 "base_latency": {"median_ms": 8, "sigma": 0.2},
                 "handlers": [{"name": "get"}]},
            ],
        },
        "platform": {
            "seed": seed,
            "workload": {"users": 5000, "request_rate_rps": rate},
            "defaults": {"sampling_pct": sampling, "duration_s": duration,
                         "provisioning_delay_ms": 1000},
            "clock_start": clock,
            "analysis": {"availability_delay_s": delay},
            "store_path": store_path,
        },
    }
    if regions is not None:
        raw["platform"]["regions"] = regions
    return raw


def two_tier_config(**kwargs):
    return config_from_dict(two_tier_raw(**kwargs))


@pytest.fixture
def make_config():
    return two_tier_config


@pytest.fixture
def make_raw():
    return two_tier_raw
