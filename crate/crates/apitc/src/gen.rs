//! Seeded generation of well-typed configurations, used by the law harness
//! for schema instantiation and by the test suites as a term corpus.
//!
//! Terms are built bottom-up together with their typing judgement, so every
//! produced term is well-typed by construction.

use crate::syntax::{BehaviorId, Behaviors, Config, Name, Prefix};
use crate::typing::{typecheck, TempTarget, TypeJudgement};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Generation parameters.
#[derive(Clone, Debug)]
pub struct GenConfig {
    /// Structural depth of generated terms.
    pub max_depth: usize,
    /// Free-name universe to draw from.
    pub names: Vec<Name>,
    /// Whether instantiations of the library behaviors may appear.
    pub allow_defs: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            max_depth: 3,
            names: ["a", "b", "c", "d"].iter().map(|s| Name::src(s)).collect(),
            allow_defs: false,
        }
    }
}

/// Library definitions available to generated terms.
pub fn library_defs() -> Behaviors {
    let defs_src = "\
def Sink(x;) = x?(u).Sink<x;>
def Fwd(x; y) = x?(u).(y!u | Fwd<x; y>)
";
    crate::syntax::parse_defs(defs_src).expect("library definitions parse")
}

pub struct TermGen {
    rng: ChaCha8Rng,
    cfg: GenConfig,
    defs: Behaviors,
    binder_counter: usize,
}

impl TermGen {
    pub fn new(seed: u64, cfg: GenConfig) -> TermGen {
        let defs = if cfg.allow_defs {
            library_defs()
        } else {
            Behaviors::new()
        };
        TermGen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            cfg,
            defs,
            binder_counter: 0,
        }
    }

    pub fn defs(&self) -> &Behaviors {
        &self.defs
    }

    pub fn pick_name(&mut self) -> Name {
        self.name()
    }

    fn name(&mut self) -> Name {
        self.cfg.names[self.rng.gen_range(0..self.cfg.names.len())].clone()
    }

    fn binder(&mut self) -> Name {
        // Mostly a dedicated binder pool; occasionally a universe name, so
        // shadowing gets exercised.
        if self.rng.gen_bool(0.8) {
            self.binder_counter += 1;
            Name::Src(format!("v{}", self.binder_counter))
        } else {
            self.name()
        }
    }

    /// One well-typed term with its judgement.
    pub fn term(&mut self) -> (Config, TypeJudgement) {
        let depth = self.cfg.max_depth;
        self.gen(depth)
    }

    /// A batch of well-typed terms.
    pub fn terms(&mut self, count: usize) -> Vec<(Config, TypeJudgement)> {
        (0..count).map(|_| self.term()).collect()
    }

    fn leaf(&mut self) -> (Config, TypeJudgement) {
        if self.rng.gen_bool(0.3) {
            (Config::Nil, TypeJudgement::empty())
        } else {
            (
                Config::msg(self.name(), self.name()),
                TypeJudgement::empty(),
            )
        }
    }

    fn gen(&mut self, depth: usize) -> (Config, TypeJudgement) {
        if depth == 0 {
            return self.leaf();
        }
        // Retry across constructor choices until a typable shape comes up.
        for _ in 0..16 {
            let pick = self.rng.gen_range(0..100);
            let result = match pick {
                0..=9 => Some(self.leaf()),
                10..=34 => self.gen_input(depth),
                35..=44 => {
                    let (body, j) = self.gen(depth - 1);
                    Some((Config::tau(body), j))
                }
                45..=54 => {
                    let (body, j) = self.gen(depth - 1);
                    Some((
                        Config::Msg {
                            subject: self.name(),
                            object: self.name(),
                            cont: Some(Box::new(body)),
                        },
                        j,
                    ))
                }
                55..=69 => self.gen_par(depth),
                70..=79 => self.gen_restrict(depth),
                80..=89 => self.gen_case(depth),
                90..=93 => self.gen_step(depth),
                _ => self.gen_inst(),
            };
            if let Some(r) = result {
                return r;
            }
        }
        self.leaf()
    }

    /// Input prefix via the ACT rule; fails when the body judgement does not
    /// fit any premise shape.
    fn gen_input(&mut self, depth: usize) -> Option<(Config, TypeJudgement)> {
        let (body, j) = self.gen(depth - 1);
        let rho: Vec<Name> = j.receptionists.iter().cloned().collect();
        let subject = match rho.len() {
            0 => self.name(),
            1 => {
                let z = rho[0].clone();
                match j.temp_map.get(&z) {
                    Some(TempTarget::Star) => z,
                    Some(TempTarget::Bottom) => {
                        // subject must differ from the lone temporary name
                        let mut s = self.name();
                        for _ in 0..8 {
                            if s != z {
                                break;
                            }
                            s = self.name();
                        }
                        if s == z {
                            return None;
                        }
                        s
                    }
                    _ => return None,
                }
            }
            2 => {
                // only the ch(x,z) shape is inputtable, on subject x
                let x = rho
                    .iter()
                    .find(|n| matches!(j.temp_map.get(n), Some(TempTarget::Name(_))))?;
                x.clone()
            }
            _ => return None,
        };
        // The binder must avoid the body's receptionists (ACT side
        // condition) and the subject (bad alpha-representative otherwise).
        let mut binder = self.binder();
        for _ in 0..8 {
            if !j.receptionists.contains(&binder) && binder != subject {
                break;
            }
            binder = self.binder();
        }
        if j.receptionists.contains(&binder) || binder == subject {
            return None;
        }
        let term = Config::input(subject, binder, body);
        let judgement = typecheck(&term, &self.defs).ok()?;
        Some((term, judgement))
    }

    fn gen_par(&mut self, depth: usize) -> Option<(Config, TypeJudgement)> {
        let (left, jl) = self.gen(depth - 1);
        for _ in 0..8 {
            let (right, jr) = self.gen(depth - 1);
            if jl.receptionists.is_disjoint(&jr.receptionists) {
                let term = Config::par(left.clone(), right);
                let judgement = typecheck(&term, &self.defs).ok()?;
                return Some((term, judgement));
            }
        }
        let term = Config::par(left, Config::msg(self.name(), self.name()));
        let judgement = typecheck(&term, &self.defs).ok()?;
        Some((term, judgement))
    }

    fn gen_restrict(&mut self, depth: usize) -> Option<(Config, TypeJudgement)> {
        let (body, _) = self.gen(depth - 1);
        let binder = if self.rng.gen_bool(0.7) {
            self.name()
        } else {
            self.binder()
        };
        let term = Config::restrict(binder, body);
        let judgement = typecheck(&term, &self.defs).ok()?;
        Some((term, judgement))
    }

    fn gen_case(&mut self, depth: usize) -> Option<(Config, TypeJudgement)> {
        let scrutinee = self.name();
        let n_branches = self.rng.gen_range(1..=3);
        let mut branches = Vec::new();
        for _ in 0..n_branches {
            let (body, _) = self.gen(depth - 1);
            // bias towards matching guards so branching actually fires
            let guard = if self.rng.gen_bool(0.5) {
                scrutinee.clone()
            } else {
                self.name()
            };
            branches.push((guard, body));
        }
        let term = Config::Case {
            scrutinee,
            branches,
        };
        let judgement = typecheck(&term, &self.defs).ok()?;
        Some((term, judgement))
    }

    fn gen_step(&mut self, depth: usize) -> Option<(Config, TypeJudgement)> {
        let (body, _) = self.gen(depth - 1);
        let in_subject = self.name();
        let mut binder = self.binder();
        for _ in 0..8 {
            if binder != in_subject {
                break;
            }
            binder = self.binder();
        }
        if binder == in_subject {
            return None;
        }
        let term = Config::Step {
            prefixes: vec![
                Prefix::Out {
                    subject: self.name(),
                    object: self.name(),
                },
                Prefix::In {
                    subject: in_subject,
                    binder,
                },
            ],
            body: Box::new(body),
        };
        let judgement = typecheck(&term, &self.defs).ok()?;
        Some((term, judgement))
    }

    fn gen_inst(&mut self) -> Option<(Config, TypeJudgement)> {
        if !self.cfg.allow_defs {
            return None;
        }
        let term = if self.rng.gen_bool(0.5) {
            Config::Inst {
                behavior: BehaviorId("Sink".into()),
                actor_args: vec![self.name()],
                param_args: vec![],
            }
        } else {
            Config::Inst {
                behavior: BehaviorId("Fwd".into()),
                actor_args: vec![self.name()],
                param_args: vec![self.name()],
            }
        };
        let judgement = typecheck(&term, &self.defs).ok()?;
        Some((term, judgement))
    }
}

/// Convenience: `count` well-typed terms for a seed.
pub fn well_typed_terms(
    seed: u64,
    count: usize,
    cfg: GenConfig,
) -> (Vec<(Config, TypeJudgement)>, Behaviors) {
    let mut g = TermGen::new(seed, cfg);
    let terms = g.terms(count);
    let defs = g.defs().clone();
    (terms, defs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::free_names;

    #[test]
    fn generated_terms_typecheck() {
        let (terms, defs) = well_typed_terms(7, 200, GenConfig::default());
        for (term, judgement) in &terms {
            let again = typecheck(term, &defs).expect("generated term must typecheck");
            assert_eq!(&again, judgement);
            let fns = free_names(term);
            assert!(judgement.receptionists.iter().all(|n| fns.contains(n)));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, _) = well_typed_terms(42, 50, GenConfig::default());
        let (b, _) = well_typed_terms(42, 50, GenConfig::default());
        assert_eq!(a, b);
    }

    #[test]
    fn defs_corpus_typechecks() {
        let cfg = GenConfig {
            allow_defs: true,
            ..GenConfig::default()
        };
        let (terms, defs) = well_typed_terms(3, 100, cfg);
        assert!(!defs.is_empty());
        for (term, _) in &terms {
            typecheck(term, &defs).unwrap();
        }
    }

    #[test]
    fn library_defs_are_valid() {
        let defs = library_defs();
        for def in defs.values() {
            crate::typing::check_behavior_def(def, &defs).unwrap();
        }
    }

    fn count_constructors(c: &Config, acc: &mut std::collections::BTreeMap<&'static str, usize>) {
        let tag = match c {
            Config::Nil => "nil",
            Config::Msg { .. } => "msg",
            Config::Input { .. } => "input",
            Config::Restrict { .. } => "nu",
            Config::Case { .. } => "case",
            Config::Par(_, _) => "par",
            Config::Inst { .. } => "inst",
            Config::Tau(_) => "tau",
            Config::Step { .. } => "step",
        };
        *acc.entry(tag).or_default() += 1;
        match c {
            Config::Msg { cont: Some(k), .. } => count_constructors(k, acc),
            Config::Input { body, .. }
            | Config::Restrict { body, .. }
            | Config::Tau(body)
            | Config::Step { body, .. } => count_constructors(body, acc),
            Config::Case { branches, .. } => {
                for (_, b) in branches {
                    count_constructors(b, acc);
                }
            }
            Config::Par(l, r) => {
                count_constructors(l, acc);
                count_constructors(r, acc);
            }
            _ => {}
        }
    }

    #[test]
    fn corpus_covers_all_constructors() {
        let cfg = GenConfig {
            allow_defs: true,
            ..GenConfig::default()
        };
        let (terms, _) = well_typed_terms(11, 400, cfg);
        let mut acc = std::collections::BTreeMap::new();
        for (t, _) in &terms {
            count_constructors(t, &mut acc);
        }
        for tag in ["nil", "msg", "input", "nu", "case", "par", "inst", "tau", "step"] {
            assert!(acc.get(tag).copied().unwrap_or(0) > 0, "missing {tag}");
        }
    }
}
