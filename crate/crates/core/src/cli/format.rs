//! The sectioned text format for bundles and named fiber volume forms.
//!
//! ```text
//! [base]
//! vertices 0 1 2
//! edge 0 1
//! edge 1 2
//! edge 2 0
//! tree 0 1
//! b0 0
//!
//! [fiber]
//! vertex 0 0
//! vertex 1 1
//! edge 0 1
//! horizon 1
//! tail up: 1
//! v0 0
//!
//! [monodromy]
//! 2: 0→0, 1→1
//!
//! [form omega]
//! 0 0 1/2
//! tail 0 up inf
//! ```
//!
//! Base and fiber vertices are referred to by id, base edges by their index
//! in order of appearance, tails by name. Monodromy lines list `fiber id →
//! fiber id` pairs for one base edge; unlisted vertices and edges are fixed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use crate::bundle::{BaseGraph, DiscreteBundle, FiberGraph, FiberVertex, FiberVolume, ModelError, Monodromy};
use crate::scalar::{ExtReal, Rational, Scalar};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing section [{0}]")]
    MissingSection(&'static str),
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("form {form}: {msg}")]
    Form { form: String, msg: String },
}

/// A parsed file: one bundle and its forms in file order.
#[derive(Clone, Debug)]
pub struct BundleFile {
    pub bundle: DiscreteBundle,
    pub forms: Vec<(String, FiberVolume<Rational>)>,
}

impl BundleFile {
    pub fn form(&self, name: &str) -> Option<&FiberVolume<Rational>> {
        self.forms.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }
}

#[derive(Default)]
struct BaseSpec {
    vertices: Option<Vec<u32>>,
    edges: Vec<(u32, u32)>,
    tree: Option<Vec<usize>>,
    b0: Option<u32>,
}

#[derive(Default)]
struct FiberSpec {
    vertices: Vec<FiberVertex>,
    edges: Vec<(u32, u32)>,
    horizon: Option<i64>,
    tails: Vec<(String, Vec<u32>)>,
    v0: Option<u32>,
}

enum FormLine {
    Cell(u32, u32, Rational),
    Tail(u32, String, ExtReal<Rational>),
}

enum Section {
    Base,
    Fiber,
    Monodromy,
    Form(usize),
}

fn syntax(line: usize, msg: impl Into<String>) -> ParseError {
    ParseError::Syntax { line, msg: msg.into() }
}

fn num<T: std::str::FromStr>(line: usize, s: &str, what: &str) -> Result<T, ParseError> {
    s.parse().map_err(|_| syntax(line, format!("bad {what} `{s}`")))
}

fn nums<T: std::str::FromStr>(line: usize, words: &[&str], what: &str) -> Result<Vec<T>, ParseError> {
    words.iter().map(|w| num(line, w, what)).collect()
}

fn arity(line: usize, words: &[&str], n: usize) -> Result<(), ParseError> {
    if words.len() != n {
        return Err(syntax(line, format!("`{}` takes {} argument(s)", words[0], n - 1)));
    }
    Ok(())
}

fn once<T>(slot: &mut Option<T>, value: T, line: usize, key: &str) -> Result<(), ParseError> {
    if slot.replace(value).is_some() {
        return Err(syntax(line, format!("`{key}` given twice")));
    }
    Ok(())
}

pub fn parse(text: &str) -> Result<BundleFile, ParseError> {
    let mut base = BaseSpec::default();
    let mut fiber = FiberSpec::default();
    let mut mono: Vec<(usize, usize, u32, u32)> = Vec::new();
    let mut forms: Vec<(String, Vec<(usize, FormLine)>)> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut section: Option<Section> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap().trim();
        if content.is_empty() {
            continue;
        }
        if let Some(head) = content.strip_prefix('[') {
            let head = head.strip_suffix(']').ok_or_else(|| syntax(line, "unterminated section header"))?.trim();
            let key = head.to_string();
            if !seen.insert(key.clone()) {
                return Err(syntax(line, format!("section [{head}] repeated")));
            }
            section = Some(match head.split_whitespace().collect::<Vec<_>>().as_slice() {
                ["base"] => Section::Base,
                ["fiber"] => Section::Fiber,
                ["monodromy"] => Section::Monodromy,
                ["form", name] => {
                    forms.push((name.to_string(), Vec::new()));
                    Section::Form(forms.len() - 1)
                }
                _ => return Err(syntax(line, format!("unknown section [{head}]"))),
            });
            continue;
        }
        let words: Vec<&str> = content.split_whitespace().collect();
        match section {
            None => return Err(syntax(line, "content before the first section")),
            Some(Section::Base) => match words[0] {
                "vertices" => once(&mut base.vertices, nums(line, &words[1..], "base vertex")?, line, "vertices")?,
                "edge" => {
                    arity(line, &words, 3)?;
                    base.edges.push((num(line, words[1], "base vertex")?, num(line, words[2], "base vertex")?));
                }
                "tree" => once(&mut base.tree, nums(line, &words[1..], "edge index")?, line, "tree")?,
                "b0" => {
                    arity(line, &words, 2)?;
                    once(&mut base.b0, num(line, words[1], "base vertex")?, line, "b0")?;
                }
                other => return Err(syntax(line, format!("unknown base key `{other}`"))),
            },
            Some(Section::Fiber) => match words[0] {
                "vertex" => {
                    arity(line, &words, 3)?;
                    fiber.vertices.push(FiberVertex {
                        id: num(line, words[1], "fiber vertex")?,
                        level: num(line, words[2], "level")?,
                    });
                }
                "edge" => {
                    arity(line, &words, 3)?;
                    fiber.edges.push((num(line, words[1], "fiber vertex")?, num(line, words[2], "fiber vertex")?));
                }
                "horizon" => {
                    arity(line, &words, 2)?;
                    once(&mut fiber.horizon, num(line, words[1], "horizon")?, line, "horizon")?;
                }
                "tail" => {
                    let rest = content["tail".len()..].trim();
                    let (name, vs) = rest.split_once(':').ok_or_else(|| syntax(line, "tail needs `NAME: vertices`"))?;
                    let name = name.trim();
                    if name.is_empty() || name.contains(char::is_whitespace) {
                        return Err(syntax(line, "tail name must be one word"));
                    }
                    let vs: Vec<&str> = vs.split_whitespace().collect();
                    fiber.tails.push((name.to_string(), nums(line, &vs, "fiber vertex")?));
                }
                "v0" => {
                    arity(line, &words, 2)?;
                    once(&mut fiber.v0, num(line, words[1], "fiber vertex")?, line, "v0")?;
                }
                other => return Err(syntax(line, format!("unknown fiber key `{other}`"))),
            },
            Some(Section::Monodromy) => {
                let (e, pairs) = content.split_once(':').ok_or_else(|| syntax(line, "expected `edge: v→w, …`"))?;
                let e: usize = num(line, e.trim(), "edge index")?;
                for pair in pairs.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                    let (v, w) = pair
                        .split_once('→')
                        .or_else(|| pair.split_once("->"))
                        .ok_or_else(|| syntax(line, format!("bad pair `{pair}`")))?;
                    mono.push((line, e, num(line, v.trim(), "fiber vertex")?, num(line, w.trim(), "fiber vertex")?));
                }
            }
            Some(Section::Form(k)) => {
                let entry = if words[0] == "tail" {
                    arity(line, &words, 4)?;
                    let v = ExtReal::from_wire(words[3]).ok_or_else(|| syntax(line, format!("bad mass `{}`", words[3])))?;
                    FormLine::Tail(num(line, words[1], "base vertex")?, words[2].to_string(), v)
                } else {
                    arity(line, &words, 3)?;
                    let m = Rational::from_wire(words[2]).ok_or_else(|| syntax(line, format!("bad mass `{}`", words[2])))?;
                    FormLine::Cell(num(line, words[0], "base vertex")?, num(line, words[1], "fiber vertex")?, m)
                };
                forms[k].1.push((line, entry));
            }
        }
    }

    if !seen.contains("base") {
        return Err(ParseError::MissingSection("base"));
    }
    if !seen.contains("fiber") {
        return Err(ParseError::MissingSection("fiber"));
    }
    let missing = |what: &str| syntax(0, format!("missing `{what}`"));
    let vertices = base.vertices.ok_or_else(|| missing("vertices"))?;
    let b0 = base.b0.ok_or_else(|| missing("b0"))?;
    let base_graph = BaseGraph::new(vertices, &base.edges, base.tree.unwrap_or_default(), b0)?;
    let horizon = fiber.horizon.ok_or_else(|| missing("horizon"))?;
    let v0 = fiber.v0.ok_or_else(|| missing("v0"))?;
    let fiber_graph = FiberGraph::new(fiber.vertices, &fiber.edges, horizon, fiber.tails, v0)?;

    let n = fiber_graph.len();
    let mut maps = Monodromy::trivial(base_graph.edges.len(), n).maps;
    let mut touched: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (line, e, v, w) in mono {
        let m = maps.get_mut(e).ok_or_else(|| syntax(line, format!("no base edge {e}")))?;
        let vi = fiber_graph.index_of(v).ok_or_else(|| syntax(line, format!("no fiber vertex {v}")))?;
        let wi = fiber_graph.index_of(w).ok_or_else(|| syntax(line, format!("no fiber vertex {w}")))?;
        if !touched.insert((e, vi)) {
            return Err(syntax(line, format!("vertex {v} mapped twice on edge {e}")));
        }
        m[vi] = wi;
    }
    for (e, m) in maps.iter().enumerate() {
        if m.iter().collect::<BTreeSet<_>>().len() != n {
            return Err(syntax(0, format!("monodromy of edge {e} is not a bijection")));
        }
    }
    let bundle = DiscreteBundle::new(base_graph, fiber_graph, Monodromy { maps })?;

    let mut out = Vec::new();
    for (name, lines) in forms {
        out.push((name.clone(), build_form(&bundle, &name, lines)?));
    }
    Ok(BundleFile { bundle, forms: out })
}

fn build_form(bundle: &DiscreteBundle, name: &str, lines: Vec<(usize, FormLine)>) -> Result<FiberVolume<Rational>, ParseError> {
    let fail = |msg: String| ParseError::Form { form: name.to_string(), msg };
    let base_index: BTreeMap<u32, usize> = bundle.base.vertices.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let tails = bundle.fiber.tails.len();
    let mut mass: Vec<Option<Rational>> = vec![None; bundle.cell_count()];
    let mut tail_mass: Vec<Option<ExtReal<Rational>>> = vec![None; bundle.base.len() * tails];
    for (line, entry) in lines {
        match entry {
            FormLine::Cell(b, v, m) => {
                let bi = *base_index.get(&b).ok_or_else(|| syntax(line, format!("no base vertex {b}")))?;
                let vi = bundle.fiber.index_of(v).ok_or_else(|| syntax(line, format!("no fiber vertex {v}")))?;
                if bundle.fiber.tail_of(vi).is_some() {
                    return Err(syntax(line, format!("fiber vertex {v} lies in a tail; give its tail mass")));
                }
                if mass[bundle.cell(bi, vi)].replace(m).is_some() {
                    return Err(syntax(line, format!("mass at ({b}, {v}) given twice")));
                }
            }
            FormLine::Tail(b, t, m) => {
                let bi = *base_index.get(&b).ok_or_else(|| syntax(line, format!("no base vertex {b}")))?;
                let ti = bundle.fiber.tails.iter().position(|x| x.name == t).ok_or_else(|| syntax(line, format!("no tail {t}")))?;
                if tail_mass[bi * tails + ti].replace(m).is_some() {
                    return Err(syntax(line, format!("tail mass at ({b}, {t}) given twice")));
                }
            }
        }
    }
    let mut form = FiberVolume { mass: Vec::with_capacity(mass.len()), tail_mass: Vec::with_capacity(tail_mass.len()) };
    for (c, m) in mass.into_iter().enumerate() {
        let (b, v) = bundle.split(c);
        form.mass.push(match m {
            Some(m) => m,
            None if bundle.is_tail_cell(c) => Rational::from_integer(0.into()),
            None => {
                return Err(fail(format!(
                    "missing mass at base {} fiber vertex {}",
                    bundle.base.vertices[b], bundle.fiber.vertices[v].id
                )))
            }
        });
    }
    for (k, m) in tail_mass.into_iter().enumerate() {
        let (b, t) = (k / tails, k % tails);
        form.tail_mass.push(m.ok_or_else(|| {
            fail(format!("missing tail mass at base {} tail {}", bundle.base.vertices[b], bundle.fiber.tails[t].name))
        })?);
    }
    Ok(form)
}

pub fn serialize(file: &BundleFile) -> String {
    let mut s = String::new();
    let b = &file.bundle;
    let f = &b.fiber;
    let ids: Vec<String> = b.base.vertices.iter().map(u32::to_string).collect();
    writeln!(s, "[base]\nvertices {}", ids.join(" ")).unwrap();
    for &(x, y) in &b.base.edges {
        writeln!(s, "edge {} {}", b.base.vertices[x], b.base.vertices[y]).unwrap();
    }
    let tree: Vec<String> = b.base.tree.iter().map(usize::to_string).collect();
    writeln!(s, "tree {}", tree.join(" ")).unwrap();
    writeln!(s, "b0 {}\n\n[fiber]", b.base.vertices[b.base.b0]).unwrap();
    for v in &f.vertices {
        writeln!(s, "vertex {} {}", v.id, v.level).unwrap();
    }
    for &(x, y) in &f.edges {
        writeln!(s, "edge {} {}", f.vertices[x].id, f.vertices[y].id).unwrap();
    }
    writeln!(s, "horizon {}", f.horizon).unwrap();
    for t in &f.tails {
        let vs: Vec<String> = t.vertices.iter().map(|&v| f.vertices[v].id.to_string()).collect();
        writeln!(s, "tail {}: {}", t.name, vs.join(" ")).unwrap();
    }
    writeln!(s, "v0 {}", f.vertices[f.v0].id).unwrap();
    if !b.monodromy.is_trivial() {
        s.push_str("\n[monodromy]\n");
        for (e, m) in b.monodromy.maps.iter().enumerate() {
            let pairs: Vec<String> = m
                .iter()
                .enumerate()
                .filter(|(v, w)| v != *w)
                .map(|(v, &w)| format!("{}→{}", f.vertices[v].id, f.vertices[w].id))
                .collect();
            if !pairs.is_empty() {
                writeln!(s, "{e}: {}", pairs.join(", ")).unwrap();
            }
        }
    }
    for (name, form) in &file.forms {
        writeln!(s, "\n[form {name}]").unwrap();
        for c in 0..b.cell_count() {
            if !b.is_tail_cell(c) {
                let (bi, v) = b.split(c);
                writeln!(s, "{} {} {}", b.base.vertices[bi], f.vertices[v].id, form.mass[c].to_wire()).unwrap();
            }
        }
        for bi in 0..b.base.len() {
            for (t, tail) in f.tails.iter().enumerate() {
                writeln!(s, "tail {} {} {}", b.base.vertices[bi], tail.name, form.tail(b, bi, t).to_wire()).unwrap();
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{self, TailPolicy};
    use proptest::prelude::*;

    const SMALL: &str = "
[base]
vertices 0
b0 0
tree

[fiber]
vertex 0 0
vertex 1 1   # top
edge 0 1
horizon 1
tail up: 1
v0 0

[form omega]
0 0 1/2
tail 0 up inf
";

    #[test]
    fn parses_a_minimal_file() {
        let file = parse(SMALL).unwrap();
        assert_eq!(file.bundle.cell_count(), 2);
        let w = file.form("omega").unwrap();
        assert_eq!(w.mass[0], crate::rat(1, 2));
        assert!(w.tail_mass[0].is_infinite());
    }

    #[test]
    fn rejects_unknown_sections_and_gaps() {
        let bad = SMALL.replace("[form omega]", "[forms omega]");
        assert!(matches!(parse(&bad), Err(ParseError::Syntax { .. })));
        let gap = SMALL.replace("0 0 1/2\n", "");
        assert!(matches!(parse(&gap), Err(ParseError::Form { .. })));
        let dup = SMALL.replace("0 0 1/2\n", "0 0 1/2\n0 0 1/3\n");
        assert!(parse(&dup).is_err());
        let tail_cell = SMALL.replace("0 0 1/2\n", "0 0 1/2\n0 1 1/2\n");
        assert!(parse(&tail_cell).is_err());
    }

    #[test]
    fn monodromy_must_be_bijective() {
        let text = serialize(&BundleFile { bundle: fixtures::swapped_rays(3), forms: vec![] });
        assert!(text.contains("[monodromy]"));
        let back = parse(&text).unwrap();
        assert_eq!(back.bundle.monodromy.maps, fixtures::swapped_rays(3).monodromy.maps);
        let ascii = text.replace('→', "->");
        assert!(parse(&ascii).is_ok());
        let broken = text.lines().map(|l| if l.starts_with("0:") { "0: 1→4" } else { l }).collect::<Vec<_>>().join("\n");
        assert!(parse(&broken).is_err());
    }

    fn same(a: &BundleFile, b: &BundleFile) {
        assert_eq!(a.bundle.base.vertices, b.bundle.base.vertices);
        assert_eq!(a.bundle.base.edges, b.bundle.base.edges);
        assert_eq!(a.bundle.base.tree, b.bundle.base.tree);
        assert_eq!(a.bundle.fiber.vertices, b.bundle.fiber.vertices);
        assert_eq!(a.bundle.fiber.edges, b.bundle.fiber.edges);
        assert_eq!(a.bundle.fiber.tails, b.bundle.fiber.tails);
        assert_eq!(a.bundle.monodromy.maps, b.bundle.monodromy.maps);
        assert_eq!(a.forms, b.forms);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn round_trip(which in 0usize..6, h in 3i64..9, seed in any::<u64>(), policy in 0usize..3) {
            let bundle = match which {
                0 => fixtures::triv(h),
                1 => fixtures::vec_bundle(h, 3),
                2 => fixtures::cyl(h),
                3 => fixtures::swapped_rays(h),
                4 => fixtures::line_bundle(h, 3, true),
                _ => fixtures::line_pair(h),
            };
            let policy = [TailPolicy::AllFinite, TailPolicy::AllInfinite, TailPolicy::Mixed][policy];
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            let (o, t) = fixtures::random_forms(&mut rng, &bundle, policy);
            let file = BundleFile { bundle, forms: vec![("omega".into(), o), ("tau".into(), t)] };
            let text = serialize(&file);
            let back = parse(&text).unwrap();
            same(&file, &back);
            prop_assert_eq!(serialize(&back), text);
        }
    }
}
