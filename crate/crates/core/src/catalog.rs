//! Named macro problems: mesh size, supports and point loads.
//!
//! ```text
//! [name]
//! mesh = <nelx> <nely>
//! fix  = edge <left|right|bottom|top> <x|y|xy>
//! fix  = node <i> <j> <x|y|xy>
//! load = node <i> <j> <x|y> <value>
//! ```
//!
//! `i` is `left`, `right`, `mid` or a node column; `j` is `bottom`, `top`,
//! `mid` or a node row.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fea::{BoundaryConditions, MacroMesh};

pub const BUILTIN: &str = include_str!("../data/catalog.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pos {
    Start,
    End,
    Mid,
    Index(usize),
}

impl Pos {
    fn parse(tok: &str, start: &str, end: &str) -> Result<Self> {
        Ok(match tok {
            t if t == start => Pos::Start,
            t if t == end => Pos::End,
            "mid" => Pos::Mid,
            t => Pos::Index(
                t.parse()
                    .map_err(|_| Error::Config(format!("bad node position `{t}`")))?,
            ),
        })
    }

    fn resolve(self, n_el: usize) -> Result<usize> {
        let v = match self {
            Pos::Start => 0,
            Pos::End => n_el,
            Pos::Mid => n_el / 2,
            Pos::Index(i) => i,
        };
        if v > n_el {
            return Err(Error::Config(format!("node position {v} beyond {n_el} elements")));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dirs {
    x: bool,
    y: bool,
}

impl Dirs {
    fn parse(tok: &str) -> Result<Self> {
        match tok {
            "x" => Ok(Dirs { x: true, y: false }),
            "y" => Ok(Dirs { x: false, y: true }),
            "xy" => Ok(Dirs { x: true, y: true }),
            t => Err(Error::Config(format!("bad direction `{t}`"))),
        }
    }

    fn dofs(self, node: usize) -> impl Iterator<Item = usize> {
        [(self.x, 2 * node), (self.y, 2 * node + 1)]
            .into_iter()
            .filter_map(|(on, d)| on.then_some(d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Edge {
    Left,
    Right,
    Bottom,
    Top,
}

#[derive(Debug, Clone, PartialEq)]
enum Support {
    Edge(Edge, Dirs),
    Node(Pos, Pos, Dirs),
}

#[derive(Debug, Clone, PartialEq)]
struct PointLoad {
    i: Pos,
    j: Pos,
    dirs: Dirs,
    value: f64,
}

/// A catalog entry, independent of mesh resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemDef {
    pub name: String,
    pub mesh: MacroMesh,
    supports: Vec<Support>,
    loads: Vec<PointLoad>,
}

/// A concrete macro problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub name: String,
    pub mesh: MacroMesh,
    pub bc: BoundaryConditions,
}

impl ProblemDef {
    /// Boundary conditions on `mesh` (or the default mesh).
    pub fn instantiate(&self, mesh: Option<MacroMesh>) -> Result<Problem> {
        let mesh = mesh.unwrap_or(self.mesh);
        let mut fixed = Vec::new();
        for s in &self.supports {
            match *s {
                Support::Edge(edge, dirs) => {
                    let nodes: Vec<usize> = match edge {
                        Edge::Left => (0..=mesh.nely).map(|j| mesh.node(0, j)).collect(),
                        Edge::Right => (0..=mesh.nely).map(|j| mesh.node(mesh.nelx, j)).collect(),
                        Edge::Bottom => (0..=mesh.nelx).map(|i| mesh.node(i, 0)).collect(),
                        Edge::Top => (0..=mesh.nelx).map(|i| mesh.node(i, mesh.nely)).collect(),
                    };
                    for n in nodes {
                        fixed.extend(dirs.dofs(n));
                    }
                }
                Support::Node(i, j, dirs) => {
                    let n = mesh.node(i.resolve(mesh.nelx)?, j.resolve(mesh.nely)?);
                    fixed.extend(dirs.dofs(n));
                }
            }
        }
        fixed.sort_unstable();
        fixed.dedup();
        let mut loads = Vec::new();
        for l in &self.loads {
            let n = mesh.node(l.i.resolve(mesh.nelx)?, l.j.resolve(mesh.nely)?);
            loads.extend(l.dirs.dofs(n).map(|d| (d, l.value)));
        }
        let bc = BoundaryConditions { fixed, loads };
        bc.validate(&mesh)?;
        Ok(Problem {
            name: self.name.clone(),
            mesh,
            bc,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Catalog {
    defs: Vec<ProblemDef>,
}

impl Catalog {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("built-in catalog parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut defs: Vec<ProblemDef> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| Error::Config(format!("catalog line {}: {m}", lineno + 1));
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if defs.iter().any(|d| d.name == name) {
                    return Err(err(format!("duplicate problem `{name}`")));
                }
                defs.push(ProblemDef {
                    name: name.to_string(),
                    mesh: MacroMesh::default(),
                    supports: Vec::new(),
                    loads: Vec::new(),
                });
                continue;
            }
            let def = defs
                .last_mut()
                .ok_or_else(|| err("entry before any [problem]".into()))?;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got `{line}`")))?;
            let toks: Vec<&str> = value.split_whitespace().collect();
            let wrap = |e: Error| err(e.to_string());
            match (key.trim(), toks.as_slice()) {
                ("mesh", [x, y]) => {
                    let p = |t: &str| t.parse::<usize>().map_err(|_| err(format!("bad size `{t}`")));
                    def.mesh = MacroMesh::new(p(x)?, p(y)?).map_err(wrap)?;
                }
                ("fix", ["edge", side, dirs]) => {
                    let edge = match *side {
                        "left" => Edge::Left,
                        "right" => Edge::Right,
                        "bottom" => Edge::Bottom,
                        "top" => Edge::Top,
                        s => return Err(err(format!("bad edge `{s}`"))),
                    };
                    def.supports
                        .push(Support::Edge(edge, Dirs::parse(dirs).map_err(wrap)?));
                }
                ("fix", ["node", i, j, dirs]) => def.supports.push(Support::Node(
                    Pos::parse(i, "left", "right").map_err(wrap)?,
                    Pos::parse(j, "bottom", "top").map_err(wrap)?,
                    Dirs::parse(dirs).map_err(wrap)?,
                )),
                ("load", ["node", i, j, dirs, v]) => {
                    let dirs = Dirs::parse(dirs).map_err(wrap)?;
                    if dirs.x && dirs.y {
                        return Err(err("a load acts in one direction".into()));
                    }
                    let value: f64 = v.parse().map_err(|_| err(format!("bad load `{v}`")))?;
                    def.loads.push(PointLoad {
                        i: Pos::parse(i, "left", "right").map_err(wrap)?,
                        j: Pos::parse(j, "bottom", "top").map_err(wrap)?,
                        dirs,
                        value,
                    });
                }
                (k, _) => return Err(err(format!("unrecognised entry `{k} = {value}`"))),
            }
        }
        Ok(Self { defs })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.defs.iter().map(|d| d.name.as_str())
    }

    pub fn get(&self, name: &str) -> Result<&ProblemDef> {
        self.defs.iter().find(|d| d.name == name).ok_or_else(|| {
            let known: Vec<&str> = self.names().collect();
            Error::Config(format!("unknown problem `{name}` (known: {})", known.join(", ")))
        })
    }

    pub fn problem(&self, name: &str, mesh: Option<MacroMesh>) -> Result<Problem> {
        self.get(name)?.instantiate(mesh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_problems() {
        let cat = Catalog::builtin();
        let names: Vec<_> = cat.names().collect();
        assert_eq!(names, ["tensile-bar", "mid-cantilever", "heel-bone"]);

        let p = cat.problem("mid-cantilever", None).unwrap();
        assert_eq!(p.mesh, MacroMesh::new(40, 20).unwrap());
        assert_eq!(p.bc.fixed.len(), 42);
        let tip = p.mesh.node(40, 10);
        assert_eq!(p.bc.loads, vec![(2 * tip + 1, -1.0)]);

        let t = cat.problem("tensile-bar", None).unwrap();
        assert_eq!(t.bc.fixed.len(), 22);
        assert_eq!(t.bc.loads, vec![(2 * t.mesh.node(40, 10), 1.0)]);
    }

    #[test]
    fn mesh_override() {
        let p = Catalog::builtin()
            .problem("heel-bone", Some(MacroMesh::new(6, 3).unwrap()))
            .unwrap();
        assert_eq!(p.bc.loads, vec![(2 * p.mesh.node(6, 0) + 1, -1.0)]);
    }

    #[test]
    fn errors() {
        assert!(Catalog::builtin().get("bridge").is_err());
        assert!(Catalog::parse("mesh = 2 2").is_err());
        assert!(Catalog::parse("[a]\nfix = edge middle x").is_err());
        assert!(Catalog::parse("[a]\n[a]").is_err());
        let unconstrained = Catalog::parse("[a]\nfix = edge left x\nload = node right mid x 1").unwrap();
        assert!(unconstrained.problem("a", None).is_err());
    }
}
