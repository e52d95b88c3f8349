use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::hlo::HloModule;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KindCount {
    pub kind: String,
    pub entry: usize,
    pub total: usize,
}

/// Instruction counts per kind, in the entry computation (E) and over all
/// computations (T).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CountReport {
    pub kinds: Vec<KindCount>,
    pub entry: usize,
    pub total: usize,
}

pub fn count_instructions(m: &HloModule) -> CountReport {
    let mut by_kind: BTreeMap<&'static str, (usize, usize)> = BTreeMap::new();
    for (i, c) in m.computations.iter().enumerate() {
        for inst in &c.instructions {
            let e = by_kind.entry(inst.op.kind_name()).or_default();
            if i == m.entry.0 {
                e.0 += 1;
            }
            e.1 += 1;
        }
    }
    let kinds: Vec<KindCount> =
        by_kind.into_iter().map(|(kind, (entry, total))| KindCount { kind: kind.to_string(), entry, total }).collect();
    CountReport { entry: kinds.iter().map(|k| k.entry).sum(), total: kinds.iter().map(|k| k.total).sum(), kinds }
}

impl CountReport {
    pub fn get(&self, kind: &str) -> Option<&KindCount> {
        self.kinds.iter().find(|k| k.kind == kind)
    }
}

impl fmt::Display for CountReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.kinds.iter().map(|k| k.kind.len()).max().unwrap_or(0).max("Total".len());
        writeln!(f, "{:<width$}  {:>5}  {:>5}", "Kind", "E", "T")?;
        for k in &self.kinds {
            writeln!(f, "{:<width$}  {:>5}  {:>5}", k.kind, k.entry, k.total)?;
        }
        writeln!(f, "{:<width$}  {:>5}  {:>5}", "Total", self.entry, self.total)
    }
}
