"""Gmsh MSH 4.1 ASCII reader and physical-group/region binding.

Only version 4.1 ASCII files with 2-node lines, 3-node triangles and
1-node points are accepted. Physical groups become region tags on the
mesh; ``generate_regions`` binds group names to materials, boundary
conditions and excitations by name match.
"""

from __future__ import annotations

import io
import re
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .mesh import AxiMesh, TriMesh
from .model import Excitations, ModelError, Region, Regions

SUPPORTED_VERSION = "4.1"
# element type -> node count (Gmsh numbering)
ELEMENT_NODE_COUNT = {1: 2, 2: 3, 15: 1}


class MshParseError(Exception):
    """Malformed or unsupported MSH input."""


@dataclass(frozen=True)
class PhysicalGroup:
    dim: int
    tag: int
    name: str


@dataclass
class MshDocument:
    """Raw MSH 4.1 content before mesh construction."""
    version: str
    physical_names: List[PhysicalGroup] = field(default_factory=list)
    # (dim, entity tag) -> physical tags
    entity_physicals: Dict[Tuple[int, int], List[int]] = field(default_factory=dict)
    node_tags: List[int] = field(default_factory=list)
    node_coords: List[Tuple[float, float, float]] = field(default_factory=list)
    # element blocks: (entity dim, entity tag, element type, [(tag, nodes)])
    element_blocks: List[Tuple[int, int, int, list]] = field(default_factory=list)


class _Tokens:
    """Whitespace token stream over one MSH section."""

    def __init__(self, section: str, text: str):
        self.section = section
        self.items = text.split()
        self.pos = 0

    def next(self) -> str:
        if self.pos >= len(self.items):
            raise MshParseError(f"unexpected end of ${self.section} section")
        tok = self.items[self.pos]
        self.pos += 1
        return tok

    def next_int(self) -> int:
        tok = self.next()
        try:
            return int(tok)
        except ValueError:
            raise MshParseError(
                f"expected integer in ${self.section}, got '{tok}'") from None

    def next_float(self) -> float:
        tok = self.next()
        try:
            return float(tok)
        except ValueError:
            raise MshParseError(
                f"expected number in ${self.section}, got '{tok}'") from None


def _split_sections(text: str) -> Dict[str, str]:
    sections: Dict[str, str] = {}
    pattern = re.compile(r"^\$(\w+)\s*$", re.MULTILINE)
    pos = 0
    while True:
        m = pattern.search(text, pos)
        if m is None:
            break
        name = m.group(1)
        if name.startswith("End"):
            raise MshParseError(f"unmatched $End{name[3:]} marker")
        end = text.find(f"$End{name}", m.end())
        if end < 0:
            raise MshParseError(f"section ${name} is not terminated")
        sections[name] = text[m.end():end]
        pos = end + len(f"$End{name}")
    return sections


def _parse_physical_names(body: str) -> List[PhysicalGroup]:
    lines = [ln.strip() for ln in body.splitlines() if ln.strip()]
    if not lines:
        raise MshParseError("empty $PhysicalNames section")
    count = int(lines[0].split()[0])
    groups: List[PhysicalGroup] = []
    row = re.compile(r'^(\d+)\s+(\d+)\s+"(.*)"$')
    for ln in lines[1:]:
        m = row.match(ln)
        if m is None:
            raise MshParseError(f"malformed physical name line '{ln}'")
        groups.append(PhysicalGroup(int(m.group(1)), int(m.group(2)), m.group(3)))
    if len(groups) != count:
        raise MshParseError(
            f"$PhysicalNames announces {count} names but contains {len(groups)}")
    seen = set()
    for g in groups:
        if (g.dim, g.tag) in seen:
            raise MshParseError(
                f"duplicate physical tag {g.tag} in dimension {g.dim}")
        seen.add((g.dim, g.tag))
    return groups


def _parse_entities(body: str) -> Dict[Tuple[int, int], List[int]]:
    toks = _Tokens("Entities", body)
    counts = [toks.next_int() for _ in range(4)]
    table: Dict[Tuple[int, int], List[int]] = {}
    for dim, count in enumerate(counts):
        for _ in range(count):
            tag = toks.next_int()
            n_box = 3 if dim == 0 else 6
            for _ in range(n_box):
                toks.next_float()
            n_phys = toks.next_int()
            table[(dim, tag)] = [toks.next_int() for _ in range(n_phys)]
            if dim > 0:
                n_bound = toks.next_int()
                for _ in range(n_bound):
                    toks.next_int()
    return table


def _parse_nodes(body: str) -> Tuple[List[int], List[Tuple[float, float, float]]]:
    toks = _Tokens("Nodes", body)
    n_blocks = toks.next_int()
    n_nodes = toks.next_int()
    toks.next_int()  # min tag
    toks.next_int()  # max tag
    tags: List[int] = []
    coords: List[Tuple[float, float, float]] = []
    for _ in range(n_blocks):
        toks.next_int()  # entity dim
        toks.next_int()  # entity tag
        parametric = toks.next_int()
        if parametric != 0:
            raise MshParseError("parametric node blocks are not supported")
        count = toks.next_int()
        block_tags = [toks.next_int() for _ in range(count)]
        for tag in block_tags:
            x = toks.next_float()
            y = toks.next_float()
            z = toks.next_float()
            tags.append(tag)
            coords.append((x, y, z))
    if len(tags) != n_nodes:
        raise MshParseError(
            f"$Nodes announces {n_nodes} nodes but contains {len(tags)}")
    if len(set(tags)) != len(tags):
        raise MshParseError("duplicate node tags in $Nodes")
    return tags, coords


def _parse_elements(body: str) -> List[Tuple[int, int, int, list]]:
    toks = _Tokens("Elements", body)
    n_blocks = toks.next_int()
    n_elements = toks.next_int()
    toks.next_int()
    toks.next_int()
    blocks = []
    total = 0
    for _ in range(n_blocks):
        dim = toks.next_int()
        tag = toks.next_int()
        etype = toks.next_int()
        count = toks.next_int()
        if etype not in ELEMENT_NODE_COUNT:
            raise MshParseError(f"unsupported element type {etype}")
        rows = []
        for _ in range(count):
            etag = toks.next_int()
            nodes = tuple(toks.next_int()
                          for _ in range(ELEMENT_NODE_COUNT[etype]))
            rows.append((etag, nodes))
        blocks.append((dim, tag, etype, rows))
        total += count
    if total != n_elements:
        raise MshParseError(
            f"$Elements announces {n_elements} elements but contains {total}")
    return blocks


def parse_msh_document(source: Union[str, io.TextIOBase]) -> MshDocument:
    """Parse raw MSH 4.1 ASCII text into an MshDocument."""
    text = source.read() if hasattr(source, "read") else source
    sections = _split_sections(text)
    if "MeshFormat" not in sections:
        raise MshParseError("missing required section $MeshFormat")
    fmt = _Tokens("MeshFormat", sections["MeshFormat"])
    version = fmt.next()
    file_type = fmt.next_int()
    if file_type != 0:
        raise MshParseError(
            "unsupported binary MSH file (only 4.1 ASCII is supported)")
    if version != SUPPORTED_VERSION:
        raise MshParseError(
            f"unsupported MSH version {version} (only 4.1 ASCII is supported)")
    for required in ("Nodes", "Elements"):
        if required not in sections:
            raise MshParseError(f"missing required section ${required}")

    doc = MshDocument(version=version)
    if "PhysicalNames" in sections:
        doc.physical_names = _parse_physical_names(sections["PhysicalNames"])
    if "Entities" in sections:
        doc.entity_physicals = _parse_entities(sections["Entities"])
    doc.node_tags, doc.node_coords = _parse_nodes(sections["Nodes"])
    doc.element_blocks = _parse_elements(sections["Elements"])
    return doc


def _entity_region(doc: MshDocument, dim: int, entity_tag: int) -> int:
    phys = doc.entity_physicals.get((dim, entity_tag), [])
    if len(phys) > 1:
        raise MshParseError(
            f"entity (dim {dim}, tag {entity_tag}) carries {len(phys)} physical "
            "groups; a geometrical entity can have at most one")
    return phys[0] if phys else -1


def parse_msh(source: Union[str, io.TextIOBase],
              mesh_kind: str = "cartesian"
              ) -> Tuple[TriMesh, List[PhysicalGroup]]:
    """Read an MSH 4.1 ASCII stream into a mesh plus its physical groups.

    Triangles become elements tagged with their entity's physical group,
    lines become tagged edges, points become tagged nodes. Node tags are
    renumbered to dense 0-based indices in sorted-tag order.
    """
    if mesh_kind not in ("cartesian", "axisymmetric"):
        raise ValueError(f"unknown mesh kind '{mesh_kind}'")
    doc = parse_msh_document(source)

    order = sorted(range(len(doc.node_tags)), key=lambda i: doc.node_tags[i])
    tag_to_index = {doc.node_tags[i]: k for k, i in enumerate(order)}
    coords = np.array([doc.node_coords[i] for i in order], dtype=np.float64)
    for k, (_, _, z) in enumerate((doc.node_coords[i] for i in order)):
        if abs(z) > 1e-12:
            raise MshParseError(
                f"node {doc.node_tags[order[k]]} has nonzero z coordinate {z}")
    nodes = coords[:, :2].copy()
    if mesh_kind == "axisymmetric":
        tiny = (nodes[:, 0] < 0.0) & (nodes[:, 0] >= -1e-12)
        nodes[tiny, 0] = 0.0

    def remap(node_tags):
        out = []
        for t in node_tags:
            if t not in tag_to_index:
                raise MshParseError(f"element references undefined node tag {t}")
            out.append(tag_to_index[t])
        return out

    triangles: List[List[int]] = []
    elem_region: List[int] = []
    tagged_edges: List[Tuple[Tuple[int, int], int]] = []
    node_region: Dict[int, int] = {}
    for dim, entity_tag, etype, rows in doc.element_blocks:
        region = _entity_region(doc, dim, entity_tag)
        if etype == 2:
            for _, conn in rows:
                triangles.append(remap(conn))
                elem_region.append(region)
        elif etype == 1:
            if region < 0:
                continue
            for _, conn in rows:
                a, b = remap(conn)
                tagged_edges.append(((a, b), region))
        else:  # point
            if region < 0:
                continue
            for _, conn in rows:
                node_region[remap(conn)[0]] = region

    mesh_cls = AxiMesh if mesh_kind == "axisymmetric" else TriMesh
    mesh = mesh_cls(nodes, np.asarray(triangles, dtype=np.int64).reshape(-1, 3),
                    np.asarray(elem_region, dtype=np.int64),
                    tagged_edges, node_region)
    return mesh, list(doc.physical_names)


def read_msh_file(path, mesh_kind: str = "cartesian"):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_msh(fh, mesh_kind)


def generate_regions(groups: List[PhysicalGroup], materials,
                     boundary_conditions, excitations: Optional[Excitations] = None
                     ) -> Regions:
    """One Region per physical group, bound by name match against containers.

    A group name that resolves to nothing gets an empty region and a
    warning; an ambiguous name (duplicate names within one container)
    raises.
    """
    excitations = excitations if excitations is not None else Excitations()
    regions = Regions()
    tags_seen: Dict[int, int] = {}
    for group in groups:
        if group.tag in tags_seen:
            raise ModelError(
                f"physical tag {group.tag} is used in dimensions "
                f"{tags_seen[group.tag]} and {group.dim}; region ids must be "
                "unique across dimensions")
        tags_seen[group.tag] = group.dim
        region = Region(id=group.tag, dim=group.dim)
        mat = materials.by_name(group.name)
        bc = boundary_conditions.by_name(group.name)
        exci = excitations.by_name(group.name)
        if mat is not None:
            region.mat = mat.id
        if bc is not None:
            region.bc = bc.id
        if exci is not None:
            region.exci = exci.id
        if mat is None and bc is None and exci is None:
            warnings.warn(
                f"physical group '{group.name}' (dim {group.dim}, tag "
                f"{group.tag}) matched no material, boundary condition or "
                "excitation")
        regions.add(region)
    return regions


def write_msh_debug(mesh: TriMesh, groups: List[PhysicalGroup]) -> str:
    """Serialize a mesh back to MSH 4.1 ASCII for diagnostics and tests.

    The output is a valid input for parse_msh and is a fixed point on the
    node/element/group content; entity numbering is synthetic.
    """
    out = io.StringIO()
    out.write("$MeshFormat\n4.1 0 8\n$EndMeshFormat\n")
    if groups:
        out.write("$PhysicalNames\n")
        out.write(f"{len(groups)}\n")
        for g in groups:
            out.write(f'{g.dim} {g.tag} "{g.name}"\n')
        out.write("$EndPhysicalNames\n")

    point_tags = sorted({int(t) for t in mesh.node_region if t >= 0})
    curve_tags = sorted({int(t) for t in mesh.edge_region if t >= 0})
    surface_tags = sorted({int(t) for t in mesh.elem_region})
    out.write("$Entities\n")
    out.write(f"{len(point_tags)} {len(curve_tags)} {len(surface_tags)} 0\n")
    for t in point_tags:
        out.write(f"{t} 0 0 0 1 {t}\n")
    for t in curve_tags:
        out.write(f"{t} 0 0 0 0 0 0 1 {t} 0\n")
    for t in surface_tags:
        phys = f"1 {t}" if t >= 0 else "0"
        out.write(f"{abs(t) if t >= 0 else 999} 0 0 0 0 0 0 {phys} 0\n")
    out.write("$EndEntities\n")

    out.write("$Nodes\n")
    n = mesh.num_nodes
    first_surface = surface_tags[0] if surface_tags else 0
    entity = abs(first_surface) if first_surface >= 0 else 999
    out.write(f"1 {n} 1 {n}\n")
    out.write(f"2 {entity} 0 {n}\n")
    for i in range(n):
        out.write(f"{i + 1}\n")
    for x, y in mesh.nodes:
        out.write(f"{x!r} {y!r} 0\n")
    out.write("$EndNodes\n")

    blocks = []
    for t in surface_tags:
        elems = np.flatnonzero(mesh.elem_region == t)
        entity = abs(t) if t >= 0 else 999
        rows = [(int(e), tuple(int(v) + 1 for v in mesh.elements[e]))
                for e in elems]
        blocks.append((2, entity, 2, rows))
    for t in curve_tags:
        edges = np.flatnonzero(mesh.edge_region == t)
        rows = [(int(e), tuple(int(v) + 1 for v in mesh.edges[e]))
                for e in edges]
        blocks.append((1, t, 1, rows))
    for t in point_tags:
        rows = [(int(i), (int(i) + 1,))
                for i in np.flatnonzero(mesh.node_region == t)]
        blocks.append((0, t, 15, rows))

    total = sum(len(rows) for _, _, _, rows in blocks)
    out.write("$Elements\n")
    out.write(f"{len(blocks)} {total} 1 {max(total, 1)}\n")
    tag = 1
    for dim, entity, etype, rows in blocks:
        out.write(f"{dim} {entity} {etype} {len(rows)}\n")
        for _, conn in rows:
            out.write(" ".join([str(tag)] + [str(c) for c in conn]) + "\n")
            tag += 1
    out.write("$EndElements\n")
    return out.getvalue()


def lint_msh(text: str, mesh_kind: str = "cartesian") -> List[str]:
    """Parse and validate an MSH stream; returns human-readable findings."""
    mesh, groups = parse_msh(text, mesh_kind)
    lines = [
        f"nodes: {mesh.num_nodes}",
        f"triangles: {mesh.num_elements}",
        f"edges: {mesh.num_edges} ({int(mesh.boundary_edge.sum())} on the boundary)",
        f"tagged edges: {int((mesh.edge_region >= 0).sum())}",
        f"physical groups: {len(groups)}",
    ]
    untagged = int((mesh.elem_region < 0).sum())
    if untagged:
        lines.append(f"warning: {untagged} triangles carry no physical group")
    present = {tag for tag, _ in mesh.region_tags()}
    for g in groups:
        if g.tag not in present:
            lines.append(
                f"warning: physical group '{g.name}' (tag {g.tag}) has no entities")
    lines.append("mesh is valid")
    return lines
