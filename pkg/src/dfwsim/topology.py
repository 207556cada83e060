"""Fabric description: switches, hosts, links, and deterministic paths."""

from __future__ import annotations

from dataclasses import dataclass
from heapq import heappop, heappush

from .core_model import ip_str, parse_ip

__all__ = [
    "DEFAULT_BANDWIDTH_BPS",
    "DEFAULT_LATENCY_S",
    "Host",
    "Link",
    "Topology",
    "TopologyError",
    "build_flat",
    "build_tree",
]

DEFAULT_BANDWIDTH_BPS = 1_000_000_000
DEFAULT_LATENCY_S = 0.0001

# Hosts get addresses counting up from here; the numbering simply carries
# into the next octet if a topology outgrows the /24.
BASE_HOST_IP = parse_ip("10.0.3.1")


class TopologyError(ValueError):
    """The topology is malformed or an element reference does not resolve."""


@dataclass(frozen=True)
class Host:
    name: str
    ip: int
    switch: str
    port: int
    mac: int = 0


@dataclass
class Link:
    """Undirected link between two nodes (switch or host) by name."""

    a: str
    b: str
    bandwidth_bps: int = DEFAULT_BANDWIDTH_BPS
    latency_s: float = DEFAULT_LATENCY_S
    up: bool = True

    def other(self, node: str) -> str:
        return self.b if node == self.a else self.a


def _id_key(node_id: str) -> tuple[int, str]:
    # orders s2 before s10 while staying total for arbitrary ids
    return (len(node_id), node_id)


class Topology:
    """Mutable fabric model with deterministic construction order."""

    def __init__(self) -> None:
        self.switches: list[str] = []
        self.hosts: dict[str, Host] = {}
        self.links: list[Link] = []
        self._ports: dict[str, dict[int, str]] = {}  # switch -> port -> peer name
        self._port_of: dict[tuple[str, str], int] = {}  # (switch, peer) -> port
        self._next_port: dict[str, int] = {}
        self._links_by_pair: dict[tuple[str, str], Link] = {}
        self._hosts_by_ip: dict[int, Host] = {}

    # -- construction -----------------------------------------------------

    def add_switch(self, switch_id: str) -> None:
        if switch_id in self._ports or switch_id in self.hosts:
            raise TopologyError(f"duplicate node id {switch_id!r}")
        self.switches.append(switch_id)
        self._ports[switch_id] = {}
        self._next_port[switch_id] = 1

    def add_link(
        self,
        a: str,
        b: str,
        bandwidth_bps: int = DEFAULT_BANDWIDTH_BPS,
        latency_s: float = DEFAULT_LATENCY_S,
    ) -> Link:
        for node in (a, b):
            if node not in self._ports and node not in self.hosts:
                raise TopologyError(f"link endpoint {node!r} is not a known node")
        link = Link(a, b, bandwidth_bps, latency_s)
        self.links.append(link)
        self._links_by_pair[(a, b)] = link
        self._links_by_pair[(b, a)] = link
        for node, peer in ((a, b), (b, a)):
            if node in self._ports:
                port = self._next_port[node]
                self._next_port[node] += 1
                self._ports[node][port] = peer
                self._port_of[(node, peer)] = port
        return link

    def add_host(
        self,
        name: str,
        ip: int,
        switch: str,
        bandwidth_bps: int = DEFAULT_BANDWIDTH_BPS,
        latency_s: float = DEFAULT_LATENCY_S,
    ) -> Host:
        if name in self.hosts or name in self._ports:
            raise TopologyError(f"duplicate node id {name!r}")
        if switch not in self._ports:
            raise TopologyError(f"host {name!r} references unknown switch {switch!r}")
        if ip in self._hosts_by_ip:
            raise TopologyError(f"duplicate host ip {ip_str(ip)}")
        # hosts must exist before their access link so the link can resolve them
        self.hosts[name] = None  # type: ignore[assignment]
        self.add_link(name, switch, bandwidth_bps, latency_s)
        host = Host(name, ip, switch, self._port_of[(switch, name)], mac=len(self.hosts))
        self.hosts[name] = host
        self._hosts_by_ip[ip] = host
        return host

    def remove_switch(self, switch_id: str) -> None:
        if switch_id not in self._ports:
            raise TopologyError(f"unknown switch {switch_id!r}")
        attached = [h for h in self.hosts.values() if h.switch == switch_id]
        if attached:
            raise TopologyError(
                f"switch {switch_id!r} still has hosts attached: {[h.name for h in attached]}"
            )
        self.switches.remove(switch_id)
        del self._ports[switch_id]
        del self._next_port[switch_id]
        for link in [l for l in self.links if switch_id in (l.a, l.b)]:
            self.links.remove(link)
            del self._links_by_pair[(link.a, link.b)]
            if (link.b, link.a) in self._links_by_pair:
                del self._links_by_pair[(link.b, link.a)]
            peer = link.other(switch_id)
            self._port_of.pop((switch_id, peer), None)
            if peer in self._ports:
                port = self._port_of.pop((peer, switch_id), None)
                if port is not None:
                    del self._ports[peer][port]

    # -- queries ----------------------------------------------------------

    def is_switch(self, node: str) -> bool:
        return node in self._ports

    def ports(self, switch_id: str) -> dict[int, str]:
        try:
            return self._ports[switch_id]
        except KeyError:
            raise TopologyError(f"unknown switch {switch_id!r}") from None

    def port_to(self, switch_id: str, peer: str) -> int:
        try:
            return self._port_of[(switch_id, peer)]
        except KeyError:
            raise TopologyError(f"switch {switch_id!r} has no port toward {peer!r}") from None

    def link_between(self, a: str, b: str) -> Link | None:
        return self._links_by_pair.get((a, b))

    def link_at(self, switch_id: str, port: int) -> Link:
        peer = self.ports(switch_id).get(port)
        if peer is None:
            raise TopologyError(f"switch {switch_id!r} has no port {port}")
        return self._links_by_pair[(switch_id, peer)]

    def host_by_ip(self, ip: int) -> Host | None:
        return self._hosts_by_ip.get(ip)

    def shortest_switch_path(self, src_sw: str, dst_sw: str) -> list[str] | None:
        """Fewest-hop switch path; ties go to the lexicographically lowest ids.

        Only traverses links that are up.  Returns None when unreachable.
        """
        if src_sw not in self._ports or dst_sw not in self._ports:
            return None
        if src_sw == dst_sw:
            return [src_sw]
        start_key = (_id_key(src_sw),)
        heap: list[tuple[int, tuple, list[str]]] = [(0, start_key, [src_sw])]
        seen: set[str] = set()
        while heap:
            hops, key, path = heappop(heap)
            node = path[-1]
            if node == dst_sw:
                return path
            if node in seen:
                continue
            seen.add(node)
            for port in sorted(self._ports[node]):
                peer = self._ports[node][port]
                if peer not in self._ports or peer in seen:
                    continue
                link = self._links_by_pair[(node, peer)]
                if not link.up:
                    continue
                heappush(heap, (hops + 1, key + (_id_key(peer),), path + [peer]))
        return None

    def to_dict(self) -> dict:
        return {
            "switches": list(self.switches),
            "hosts": {
                name: {"ip": ip_str(h.ip), "switch": h.switch, "port": h.port}
                for name, h in sorted(self.hosts.items())
            },
            "links": [
                {
                    "a": l.a,
                    "b": l.b,
                    "bandwidth_bps": l.bandwidth_bps,
                    "latency_s": l.latency_s,
                    "up": l.up,
                }
                for l in self.links
            ],
        }


def build_flat(
    n_hosts: int,
    bandwidth_bps: int = DEFAULT_BANDWIDTH_BPS,
    latency_s: float = DEFAULT_LATENCY_S,
) -> Topology:
    """One switch with n_hosts hosts attached, addressed from 10.0.3.1 up."""
    if n_hosts < 2:
        raise TopologyError("a flat topology needs at least 2 hosts")
    topo = Topology()
    topo.add_switch("s1")
    for i in range(n_hosts):
        topo.add_host(f"h{i + 1}", BASE_HOST_IP + i, "s1", bandwidth_bps, latency_s)
    return topo


def build_tree(
    depth: int,
    fanout: int,
    bandwidth_bps: int = DEFAULT_BANDWIDTH_BPS,
    latency_s: float = DEFAULT_LATENCY_S,
) -> Topology:
    """Complete fanout-ary switch tree with fanout hosts per leaf switch.

    depth counts switch levels, so depth=2 fanout=8 yields a root, 8 leaf
    switches, and 64 hosts.
    """
    if depth < 1:
        raise TopologyError("tree depth must be >= 1")
    if fanout < 2:
        raise TopologyError("tree fanout must be >= 2")
    topo = Topology()
    levels: list[list[str]] = []
    counter = 1
    for level in range(depth):
        width = fanout**level
        ids = [f"s{counter + i}" for i in range(width)]
        counter += width
        for sid in ids:
            topo.add_switch(sid)
        if level > 0:
            for i, sid in enumerate(ids):
                parent = levels[level - 1][i // fanout]
                topo.add_link(parent, sid, bandwidth_bps, latency_s)
        levels.append(ids)
    host_no = 1
    for leaf in levels[-1]:
        for _ in range(fanout):
            topo.add_host(f"h{host_no}", BASE_HOST_IP + host_no - 1, leaf, bandwidth_bps, latency_s)
            host_no += 1
    return topo
