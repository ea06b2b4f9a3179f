__all__ = ['load_cluster_snapshot', 'snapshot_from_dict']

# Cell
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Union

from ...core.records import MicroserviceInfo

logger = logging.getLogger(__name__)

# Cell
def snapshot_from_dict(snapshot: Dict[str, Any]) -> List[MicroserviceInfo]:
    """Builds MicroserviceInfo entries from the `services` array of a snapshot."""
    services, seen = [], set()
    for entry in snapshot.get('services') or []:
        name = entry.get('name')
        if not name:
            raise ValueError('Cluster snapshot service without name')
        if name in seen:
            raise ValueError(f'Duplicate service {name} in cluster snapshot')
        seen.add(name)
        ports = frozenset((int(p['port']), str(p.get('protocol') or 'TCP').upper())
                          for p in entry.get('ports') or [])
        services.append(MicroserviceInfo(name=name,
                                         labels=tuple(sorted((entry.get('labels') or {}).items())),
                                         ports=ports,
                                         images=frozenset(entry.get('images') or []),
                                         service_ips=frozenset(entry.get('serviceIPs') or []),
                                         executable_paths=frozenset(entry.get('executablePaths') or [])))
    return services


def load_cluster_snapshot(path: Union[str, Path]) -> List[MicroserviceInfo]:
    """Reads a `cluster-snapshot.json` file (schema in data/fixtures/README.md)."""
    with open(path, 'r') as f:
        services = snapshot_from_dict(json.load(f))
    logger.info(f'Loaded {len(services)} services from {path}')
    return services
