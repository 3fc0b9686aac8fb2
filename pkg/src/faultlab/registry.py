"""Service discovery: clusters advertise VIPs, callers resolve them.

Resolution returns only healthy instances, and honors per-request routing
overrides so sampled traffic can be steered at a dedicated cluster without
touching the topology.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field


class RegistryError(KeyError):
    pass


@dataclass
class ClusterInstance:
    instance_id: str
    cluster: str
    service: str
    advertised_vip: str
    dynamic_properties: dict[str, str] = field(default_factory=dict)
    healthy: bool = True


class DiscoveryRegistry:
    def __init__(self) -> None:
        self._instances: dict[str, ClusterInstance] = {}
        self._ids = itertools.count(1)

    def new_instance(self, cluster: str, service: str, vip: str,
                     properties: dict[str, str] | None = None) -> ClusterInstance:
        inst = ClusterInstance(
            instance_id=f"i-{next(self._ids):05d}",
            cluster=cluster,
            service=service,
            advertised_vip=vip,
            dynamic_properties=dict(properties or {}),
        )
        self._instances[inst.instance_id] = inst
        return inst

    def deregister_cluster(self, cluster: str) -> int:
        doomed = [k for k, v in self._instances.items() if v.cluster == cluster]
        for k in doomed:
            del self._instances[k]
        return len(doomed)

    def clusters(self) -> set[str]:
        return {v.cluster for v in self._instances.values()}

    def vips(self) -> set[str]:
        return {v.advertised_vip for v in self._instances.values() if v.healthy}

    def instances_for_cluster(self, cluster: str) -> list[ClusterInstance]:
        return [v for v in self._instances.values() if v.cluster == cluster]

    def cluster_size(self, cluster: str) -> int:
        return sum(1 for v in self._instances.values()
                   if v.cluster == cluster and v.healthy)

    def resolve(self, vip: str) -> list[ClusterInstance]:
        """Healthy instances advertising ``vip``, in stable registration order."""
        return [v for v in self._instances.values()
                if v.advertised_vip == vip and v.healthy]

    def set_health(self, instance_id: str, healthy: bool) -> None:
        try:
            self._instances[instance_id].healthy = healthy
        except KeyError:
            raise RegistryError(instance_id) from None
