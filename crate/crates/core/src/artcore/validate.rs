use std::fmt;

use super::{ArticulatedObject, JointType, Semantic, AXIS_NORM_TOL};

/// A broken invariant. Any violation makes the object invalid.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ZeroAxis { part: usize },
    NonUnitAxis { part: usize, norm: f64 },
    InvertedRange { part: usize, range: [f64; 2] },
    FixedRangeNonZero { part: usize, range: [f64; 2] },
    NonFinite { part: usize },
    ParentOutOfRange { part: usize, parent: usize },
    SelfParent { part: usize },
    NoRoot,
    MultipleRoots { roots: Vec<usize> },
    Cycle { parts: Vec<usize> },
    BaseCount { count: usize },
    BaseNotRoot { part: usize },
    AabbMismatch { part: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ZeroAxis { part } => write!(f, "zero axis on part {part}"),
            Violation::NonUnitAxis { part, norm } => {
                write!(f, "non-unit axis on part {part} (norm {norm})")
            }
            Violation::InvertedRange { part, range } => {
                write!(f, "inverted range {range:?} on part {part}")
            }
            Violation::FixedRangeNonZero { part, range } => {
                write!(f, "fixed joint on part {part} has range {range:?}")
            }
            Violation::NonFinite { part } => write!(f, "non-finite joint value on part {part}"),
            Violation::ParentOutOfRange { part, parent } => {
                write!(f, "part {part} has out-of-range parent {parent}")
            }
            Violation::SelfParent { part } => write!(f, "part {part} is its own parent"),
            Violation::NoRoot => f.write_str("no root part"),
            Violation::MultipleRoots { roots } => write!(f, "multiple roots {roots:?}"),
            Violation::Cycle { parts } => write!(f, "cycle through parts {parts:?}"),
            Violation::BaseCount { count } => write!(f, "expected one root base part, found {count}"),
            Violation::BaseNotRoot { part } => write!(f, "base part {part} is not the root"),
            Violation::AabbMismatch { part } => write!(f, "cached bounds of part {part} are stale"),
        }
    }
}

impl Violation {
    pub fn kind(&self) -> &'static str {
        match self {
            Violation::ZeroAxis { .. } => "zero axis",
            Violation::NonUnitAxis { .. } => "non-unit axis",
            Violation::InvertedRange { .. } => "inverted range",
            Violation::FixedRangeNonZero { .. } => "fixed range",
            Violation::NonFinite { .. } => "non-finite",
            Violation::ParentOutOfRange { .. } => "parent out of range",
            Violation::SelfParent { .. } => "self parent",
            Violation::NoRoot => "no root",
            Violation::MultipleRoots { .. } => "multiple roots",
            Violation::Cycle { .. } => "cycle",
            Violation::BaseCount { .. } => "base count",
            Violation::BaseNotRoot { .. } => "base not root",
            Violation::AabbMismatch { .. } => "aabb mismatch",
        }
    }
}

/// Structural observations that do not make an object invalid.
#[derive(Debug, Clone, PartialEq)]
pub enum Note {
    FixedNonRoot { part: usize },
    NotDepth1,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub notes: Vec<Note>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: &str) -> bool {
        self.violations.iter().any(|v| v.kind() == kind)
    }
}

/// Lists every broken invariant. Never fails.
pub fn validate_object(obj: &ArticulatedObject) -> ValidationReport {
    let mut report = ValidationReport::default();
    let k = obj.len();

    for (i, part) in obj.parts.iter().enumerate() {
        let j = &part.joint;
        let finite = j.origin.iter().chain(j.axis.iter()).chain(j.range.iter()).all(|v| v.is_finite());
        if !finite {
            report.violations.push(Violation::NonFinite { part: i });
            continue;
        }
        if j.joint_type == JointType::Fixed {
            if j.range != [0.0, 0.0] {
                report.violations.push(Violation::FixedRangeNonZero { part: i, range: j.range });
            }
        } else {
            let norm = j.axis.norm();
            if norm == 0.0 {
                report.violations.push(Violation::ZeroAxis { part: i });
            } else if (norm - 1.0).abs() > AXIS_NORM_TOL {
                report.violations.push(Violation::NonUnitAxis { part: i, norm });
            }
        }
        if j.range[0] > j.range[1] {
            report.violations.push(Violation::InvertedRange { part: i, range: j.range });
        }
        if let Some(p) = j.parent {
            if p >= k {
                report.violations.push(Violation::ParentOutOfRange { part: i, parent: p });
            } else if p == i {
                report.violations.push(Violation::SelfParent { part: i });
            } else if j.joint_type == JointType::Fixed {
                report.notes.push(Note::FixedNonRoot { part: i });
            }
        }
        let fresh = super::PartGeometry::new(part.geometry.repr().clone()).map(|g| g.bounds());
        if fresh.ok() != Some(part.geometry.bounds()) {
            report.violations.push(Violation::AabbMismatch { part: i });
        }
    }

    let roots: Vec<usize> = (0..k).filter(|&i| obj.parts[i].joint.parent.is_none()).collect();
    match roots.len() {
        0 => report.violations.push(Violation::NoRoot),
        1 => {}
        _ => report.violations.push(Violation::MultipleRoots { roots: roots.clone() }),
    }

    for cycle in find_cycles(obj) {
        report.violations.push(Violation::Cycle { parts: cycle });
    }

    let root_bases = obj.parts.iter().filter(|p| p.joint.semantic == Semantic::Base && p.joint.parent.is_none()).count();
    if root_bases != 1 {
        report.violations.push(Violation::BaseCount { count: root_bases });
    }
    for (i, p) in obj.parts.iter().enumerate() {
        if p.joint.semantic == Semantic::Base && p.joint.parent.is_some() {
            report.violations.push(Violation::BaseNotRoot { part: i });
        }
    }

    if report.is_valid() && !obj.is_depth1() {
        report.notes.push(Note::NotDepth1);
    }
    report
}

/// Each cycle in the parent graph, reported once with its smallest member first.
fn find_cycles(obj: &ArticulatedObject) -> Vec<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let k = obj.len();
    let parent = |i: usize| obj.parts[i].joint.parent.filter(|&p| p < k && p != i);
    let mut mark = vec![Mark::New; k];
    let mut cycles = Vec::new();
    for start in 0..k {
        let mut path = Vec::new();
        let mut cur = Some(start);
        while let Some(i) = cur {
            match mark[i] {
                Mark::Done => break,
                Mark::Active => {
                    let pos = path.iter().position(|&x| x == i).unwrap();
                    let mut cyc = path[pos..].to_vec();
                    let min_pos = cyc.iter().enumerate().min_by_key(|(_, &v)| v).unwrap().0;
                    cyc.rotate_left(min_pos);
                    cycles.push(cyc);
                    break;
                }
                Mark::New => {
                    mark[i] = Mark::Active;
                    path.push(i);
                    cur = parent(i);
                }
            }
        }
        for i in path {
            mark[i] = Mark::Done;
        }
    }
    cycles
}
