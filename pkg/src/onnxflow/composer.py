"""Merge chain dataflow graphs into one multi-dataflow with switch/select routing.

Main chains are matched on their longest common prefix and suffix. A Switch
sits after the shared prefix, a Select before the shared suffix, and every
distinct middle section becomes one branch. Two actors are shared only when
they are exactly equal: same kind, same parameters, same stored codes. A
shared actor whose side inputs (parameter stores) differ between
configurations gets one Select per side port.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import EmptyInput, IncompatibleInterfaces, UnknownConfig
from .stream_sim import actors as A
from .stream_sim.graph import DataflowGraph, Structure
from .stream_sim.simulator import run_image

ROUTING_KINDS = ("Switch", "Select")


class MultiDataflow(DataflowGraph):
    """A DataflowGraph plus per-configuration bookkeeping.

    ``usage[name]`` is the set of configuration ids whose data path uses the
    actor; ``origin[cfg]`` maps merged actor names back to the names in the
    source graph of that configuration.
    """

    def __init__(self, name: str, config_count: int):
        super().__init__(name)
        self.config_count = config_count
        self.usage: dict[str, set[int]] = {}
        self.origin: list[dict[str, str]] = [{} for _ in range(config_count)]

    @property
    def switches(self) -> list[A.Actor]:
        return [a for a in self.actors.values() if a.kind in ROUTING_KINDS]

    @property
    def actor_count(self) -> int:
        """Actors taken from the source graphs; routing actors not included."""
        return sum(1 for a in self.actors.values() if a.kind not in ROUTING_KINDS)


@dataclass
class ConfigTable:
    sources: list[str]
    routes: list[dict[str, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.sources)

    def to_json(self) -> str:
        configs = [{"id": i, "source": s, "routes": dict(sorted(r.items()))}
                   for i, (s, r) in enumerate(zip(self.sources, self.routes))]
        return json.dumps({"configs": configs}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ConfigTable":
        configs = sorted(json.loads(text)["configs"], key=lambda c: c["id"])
        return cls([c["source"] for c in configs], [dict(c["routes"]) for c in configs])


# ---------------------------------------------------------------------------
# merging

def _side_inputs(graph: DataflowGraph, name: str) -> dict[str, str]:
    """Side port -> producing actor, for every input port other than ``in``."""
    actor = graph.actors[name]
    return {p: ch.src for p, ch in actor.inputs.items() if p != "in"}


def _in_capacity(graph: DataflowGraph, name: str) -> int | None:
    ch = graph.actors[name].inputs.get("in")
    return ch.capacity if ch is not None else None


def _key(graph: DataflowGraph, name: str) -> tuple:
    return graph.actors[name].signature(), _in_capacity(graph, name)


def _side_key(graph: DataflowGraph, name: str) -> tuple:
    actor = graph.actors[name]
    return actor.signature(), actor.outputs["out"].capacity


def merge(graphs: list[DataflowGraph]) -> tuple[MultiDataflow, ConfigTable]:
    if not graphs:
        raise EmptyInput("merge needs at least one dataflow graph")
    for g in graphs:
        g.validate()
    first = graphs[0]
    for g in graphs[1:]:
        if (g.input_layout, g.output_layout) != (first.input_layout, first.output_layout):
            raise IncompatibleInterfaces(
                f"{g.name!r} streams {g.input_layout} -> {g.output_layout}, "
                f"{first.name!r} streams {first.input_layout} -> {first.output_layout}"
            )
    n = len(graphs)
    chains = [g.main_chain() for g in graphs]
    keys = [[_key(g, a) for a in chain] for g, chain in zip(graphs, chains)]

    shortest = min(len(k) for k in keys)
    pre = 0
    while pre < shortest and all(k[pre] == keys[0][pre] for k in keys):
        pre += 1
    suf = 0
    while suf < shortest - pre and all(k[-1 - suf] == keys[0][-1 - suf] for k in keys):
        suf += 1

    md = MultiDataflow(first.name if n == 1 else "+".join(g.name for g in graphs), n)
    table = ConfigTable([g.name for g in graphs], [{} for _ in range(n)])
    everyone = set(range(n))

    def adopt(users, merged_name):
        """Instantiate the actor behind ``users`` [(cfg, graph, original name)] once."""
        _, g, name = users[0]
        md.add(g.actors[name].clone(merged_name))
        md.usage[merged_name] = {c for c, _, _ in users}
        for c, _, orig in users:
            md.origin[c][merged_name] = orig
        return merged_name

    def attach_sides(cfg_ids, merged_name, group_sources):
        """Connect the side ports of ``merged_name`` for the configs in ``cfg_ids``.

        ``group_sources`` lists (cfg, graph, original actor name) for those configs.
        """
        _, g0, n0 = group_sources[0]
        for port in sorted(_side_inputs(g0, n0)):
            variants: list[tuple] = []  # (key, [(cfg, g, store_name)])
            for cfg, g, name in group_sources:
                store = g.actors[name].inputs[port].src
                key = _side_key(g, store)
                for vkey, members in variants:
                    if vkey == key:
                        members.append((cfg, g, store))
                        break
                else:
                    variants.append((key, [(cfg, g, store)]))
            dst_ch = g0.actors[n0].inputs[port]
            if len(variants) == 1:
                members = variants[0][1]
                store_name = adopt(members, _fresh(md, members[0][2], members[0][0]))
                md.connect(store_name, "out", merged_name, port, dst_ch.capacity, dst_ch.format)
                continue
            sel = md.add(A.Select(f"sel{_count(md, 'Select')}", len(variants)))
            md.usage[sel.name] = set(cfg_ids)
            md.connect(sel.name, "out", merged_name, port, dst_ch.capacity, dst_ch.format)
            for b, (_, members) in enumerate(variants):
                _, g, store = members[0]
                store_name = adopt(members, _fresh(md, store, members[0][0]))
                src_ch = g.actors[store].outputs["out"]
                md.connect(store_name, "out", sel.name, f"in{b}", src_ch.capacity, src_ch.format)
                for cfg, _, _ in members:
                    table.routes[cfg][sel.name] = b

    def place_shared(position_names, merged_name, cfg_ids):
        """Adopt one shared main-chain actor and wire its side inputs."""
        users = [(c, graphs[c], position_names[c]) for c in cfg_ids]
        adopt(users, merged_name)
        attach_sides(cfg_ids, merged_name, users)

    def link(src, dst, g, orig_dst, src_port="out", dst_port="in"):
        ch = g.actors[orig_dst].inputs["in"]
        md.connect(src, src_port, dst, dst_port, ch.capacity, ch.format)

    # shared prefix
    prev = None
    for i in range(pre):
        name = chains[0][i]
        place_shared([c[i] for c in chains], name, sorted(everyone))
        if prev is not None:
            link(prev, name, first, name)
        prev = name

    # middle branches, deduplicated by their key sequence
    branches: list[tuple[tuple, list[int]]] = []
    for cfg in range(n):
        mid = tuple(keys[cfg][pre:len(keys[cfg]) - suf])
        for bkey, members in branches:
            if bkey == mid:
                members.append(cfg)
                break
        else:
            branches.append((mid, [cfg]))

    suffix_head = chains[0][len(chains[0]) - suf] if suf else None
    if len(branches) == 1:
        members = branches[0][1]
        g = graphs[members[0]]
        mid_names = chains[members[0]][pre:len(chains[members[0]]) - suf]
        for j, name in enumerate(mid_names):
            place_shared([chains[c][pre + j] for c in range(n)], name, members)
            link(prev, name, g, name)
            prev = name
        if suffix_head is not None:
            _adopt_suffix(md, graphs, chains, suf, everyone, place_shared, link, prev)
    else:
        sw = md.add(A.Switch(f"sw{_count(md, 'Switch')}", len(branches)))
        sel = md.add(A.Select(f"sel{_count(md, 'Select')}", len(branches)))
        md.usage[sw.name] = set(everyone)
        md.usage[sel.name] = set(everyone)
        head_ch = first.actors[chains[0][pre]].inputs["in"]
        md.connect(prev, "out", sw.name, "in", head_ch.capacity, head_ch.format)
        for b, (_, members) in enumerate(branches):
            c0 = members[0]
            g = graphs[c0]
            mid_names = chains[c0][pre:len(chains[c0]) - suf]
            last, port = sw.name, f"out{b}"
            for j, name in enumerate(mid_names):
                merged = _fresh(md, name, c0)
                place_shared([chains[c][pre + j] if c in members else None for c in range(n)],
                             merged, members)
                ch = g.actors[name].inputs["in"]
                md.connect(last, port, merged, "in", ch.capacity, ch.format)
                last, port = merged, "out"
            tail = g.actors[chains[c0][len(chains[c0]) - suf]].inputs["in"]
            md.connect(last, port, sel.name, f"in{b}", tail.capacity, tail.format)
            for c in members:
                table.routes[c][sw.name] = b
                table.routes[c][sel.name] = b
        _adopt_suffix(md, graphs, chains, suf, everyone, place_shared, link, sel.name)
    # total table: configs that never reach a routing actor still get an entry
    for actor in md.switches:
        for routes in table.routes:
            routes.setdefault(actor.name, 0)
    md.validate()
    return md, table


def _adopt_suffix(md, graphs, chains, suf, everyone, place_shared, link, prev):
    first = graphs[0]
    for j in range(suf):
        names = [c[len(c) - suf + j] for c in chains]
        name = _fresh(md, names[0], 0)
        place_shared(names, name, sorted(everyone))
        link(prev, name, first, names[0])
        prev = name


def _count(md: MultiDataflow, kind: str) -> int:
    return sum(1 for a in md.actors.values() if a.kind == kind)


def _fresh(md: MultiDataflow, name: str, cfg: int) -> str:
    candidate = name if name not in md.actors else f"{name}_c{cfg}"
    k = 1
    while candidate in md.actors:
        candidate = f"{name}_c{cfg}_{k}"
        k += 1
    return candidate


# ---------------------------------------------------------------------------
# execution and reporting

def configure(md: MultiDataflow, table: ConfigTable, config_id: int) -> MultiDataflow:
    if not 0 <= config_id < md.config_count:
        raise UnknownConfig(f"configuration {config_id} not in 0..{md.config_count - 1}")
    routes = table.routes[config_id]
    for actor in md.switches:
        actor.route = routes.get(actor.name, 0)
    return md


def execute_config(md: MultiDataflow, table: ConfigTable, config_id: int, image,
                   scheduler=None):
    """Output codes of configuration ``config_id`` for input codes ``image``."""
    configure(md, table, config_id)
    out, _ = run_image(md, image, scheduler)
    return out


def active_structure(md: MultiDataflow, table: ConfigTable, config_id: int) -> Structure:
    """The subgraph configuration ``config_id`` activates, routing actors bypassed,
    with actor names mapped back to the source graph."""
    configure(md, table, config_id)
    names = md.origin[config_id]
    active = {a for a, users in md.usage.items() if config_id in users}

    def resolve_src(ch):
        src = md.actors[ch.src]
        while src.kind in ROUTING_KINDS:
            inner = src.inputs["in"] if src.kind == "Switch" else src.inputs[f"in{src.route}"]
            ch = inner
            src = md.actors[ch.src]
        return ch

    actors = tuple(
        (names[a.name], a.kind, tuple(sorted(a.params().items())))
        for a in md.actors.values() if a.name in active and a.kind not in ROUTING_KINDS
    )
    conns = []
    for ch in md.channels:
        dst = md.actors[ch.dst]
        if dst.kind in ROUTING_KINDS or ch.dst not in active:
            continue
        src_ch = resolve_src(ch)
        if src_ch.src not in active:
            continue
        conns.append((names[src_ch.src], src_ch.src_port, names[ch.dst], ch.dst_port,
                      ch.capacity))
    return Structure(table.sources[config_id], tuple(sorted(actors)), tuple(sorted(conns)))


@dataclass(frozen=True)
class SharingReport:
    shared_actor_count: int
    duplicated_actor_count: int
    weight_bits_shared: int


def _store_bits(actor: A.Actor) -> int:
    t = actor.tensor
    return t.codes.size * t.format.total_bits


def sharing_report(md: MultiDataflow, graphs=None) -> SharingReport:
    """Counts over non-routing actors: shared = used by every config when there
    is one, by at least two otherwise; duplicated = used by exactly one of
    several configs."""
    need = min(2, md.config_count)
    shared = duplicated = bits = 0
    for name, actor in md.actors.items():
        if actor.kind in ROUTING_KINDS:
            continue
        users = len(md.usage[name])
        if users >= need:
            shared += 1
            if actor.kind in ("WeightStore", "BiasStore"):
                bits += _store_bits(actor)
        else:
            duplicated += 1
    return SharingReport(shared, duplicated, bits)
