//! The receptionist / temporary-name type system.
//!
//! A judgement assigns every configuration a receptionist set `rho` and a
//! temporary-name map `f : rho -> rho ∪ {⊥, *}`, computed syntax-directed.
//! `*` marks ordinary actor names, `⊥` marks temporary names, and `f(x) = z`
//! records that actor `x` currently operates under temporary name `z`.

use crate::syntax::{free_names, Behaviors, Config, Name, Prefix, Subst};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

/// Target of a temporary-name map entry.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub enum TempTarget {
    Name(Name),
    Bottom,
    Star,
}

impl fmt::Display for TempTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TempTarget::Name(n) => write!(f, "{n}"),
            TempTarget::Bottom => write!(f, "bot"),
            TempTarget::Star => write!(f, "*"),
        }
    }
}

/// A temporary-name mapping with validated invariants: `f(x) != x`, name
/// targets point at `⊥`-mapped domain elements, and name targets are
/// injective.
#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct TempMap {
    map: BTreeMap<Name, TempTarget>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TypeError {
    #[error("duplicate names in ch({0})")]
    ChDuplicate(Name),
    #[error("temporary-name maps disagree at `{0}`")]
    Incompatible(Name),
    #[error("temporary-name map invariant broken at `{0}`")]
    BadTempMap(Name),
    #[error("COMP: receptionist sets overlap on {{{}}}", names(.0))]
    CompOverlap(BTreeSet<Name>),
    #[error("ACT: body receptionists {{{}}} minus subject `{subject}` leave more than one temporary name", names(.rho))]
    ActTooManyTemps { subject: Name, rho: BTreeSet<Name> },
    #[error("ACT: body map of `{subject}` is not ch-shaped: expected {expected:?}")]
    ActBadBodyMap { subject: Name, expected: TempMap },
    #[error("ACT: input binder `{0}` occurs in the body's receptionist set")]
    ActBinderInRho(Name),
    #[error("CASE: branch maps incompatible at `{0}`")]
    CaseIncompatible(Name),
    #[error("INST: actor arguments `{0}` and `{0}` coincide")]
    InstDuplicateActors(Name),
    #[error("undefined behavior `{0}`")]
    UndefinedBehavior(String),
    #[error("behavior `{id}` body types as ({got_rho:?}) instead of its declared interface")]
    BadBehaviorTyping { id: String, got_rho: BTreeSet<Name> },
}

fn names(set: &BTreeSet<Name>) -> String {
    set.iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl TempMap {
    pub fn empty() -> TempMap {
        TempMap::default()
    }

    pub fn from_entries(
        entries: impl IntoIterator<Item = (Name, TempTarget)>,
    ) -> Result<TempMap, TypeError> {
        let mut map = BTreeMap::new();
        for (k, v) in entries {
            map.insert(k, v);
        }
        let tm = TempMap { map };
        tm.validate()?;
        Ok(tm)
    }

    pub fn domain(&self) -> BTreeSet<Name> {
        self.map.keys().cloned().collect()
    }

    pub fn get(&self, n: &Name) -> Option<&TempTarget> {
        self.map.get(n)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Name, &TempTarget)> {
        self.map.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Check the three structural invariants.
    pub fn validate(&self) -> Result<(), TypeError> {
        let mut name_targets: BTreeSet<&Name> = BTreeSet::new();
        for (k, v) in &self.map {
            if let TempTarget::Name(t) = v {
                if t == k {
                    return Err(TypeError::BadTempMap(k.clone()));
                }
                // f*(f(x)) = ⊥: the target must be a ⊥-mapped domain element
                match self.map.get(t) {
                    Some(TempTarget::Bottom) => {}
                    _ => return Err(TypeError::BadTempMap(k.clone())),
                }
                if !name_targets.insert(t) {
                    return Err(TypeError::BadTempMap(k.clone()));
                }
            }
        }
        Ok(())
    }

    /// `f1 ⊕ f2`: union of compatible maps.
    pub fn merge(&self, other: &TempMap) -> Result<TempMap, TypeError> {
        let mut map = self.map.clone();
        for (k, v) in &other.map {
            match map.get(k) {
                None => {
                    map.insert(k.clone(), v.clone());
                }
                Some(existing) if existing == v => {}
                Some(_) => return Err(TypeError::Incompatible(k.clone())),
            }
        }
        let tm = TempMap { map };
        tm.validate().map_err(|e| match e {
            TypeError::BadTempMap(n) => TypeError::Incompatible(n),
            other => other,
        })?;
        Ok(tm)
    }

    /// `f|rho`: restrict the domain; a name target that falls outside the
    /// kept domain is remapped to `*` (its temporary name is gone, the actor
    /// keeps its own name).
    pub fn restrict(&self, keep: &BTreeSet<Name>) -> TempMap {
        let map = self
            .map
            .iter()
            .filter(|(k, _)| keep.contains(*k))
            .map(|(k, v)| {
                let v = match v {
                    TempTarget::Name(t) if !keep.contains(t) => TempTarget::Star,
                    other => other.clone(),
                };
                (k.clone(), v)
            })
            .collect();
        TempMap { map }
    }

    /// Rename domain and name targets through a substitution.
    pub fn rename(&self, s: &Subst) -> TempMap {
        let map = self
            .map
            .iter()
            .map(|(k, v)| {
                let v = match v {
                    TempTarget::Name(t) => TempTarget::Name(s.apply(t)),
                    other => other.clone(),
                };
                (s.apply(k), v)
            })
            .collect();
        TempMap { map }
    }
}

impl fmt::Display for TempMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self
            .map
            .iter()
            .map(|(k, v)| format!("{k} -> {v}"))
            .collect();
        write!(f, "{{{}}}", items.join(", "))
    }
}

/// A typing judgement `rho; f |- P`.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct TypeJudgement {
    pub receptionists: BTreeSet<Name>,
    pub temp_map: TempMap,
}

impl TypeJudgement {
    pub fn empty() -> TypeJudgement {
        TypeJudgement {
            receptionists: BTreeSet::new(),
            temp_map: TempMap::empty(),
        }
    }
}

impl fmt::Display for TypeJudgement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rho = {{{}}}; f = {}", names(&self.receptionists), self.temp_map)
    }
}

/// The `ch` family of canonical temporary-name maps:
/// `ch() = {}`, `ch(x) = {x -> *}`, `ch(x,z) = {x -> z, z -> bot}` and
/// `ch(eps,z) = {z -> bot}` through [`ch_map_eps`].
pub fn ch_map(actor: Option<&Name>, temp: Option<&Name>) -> Result<TempMap, TypeError> {
    match (actor, temp) {
        (None, None) => Ok(TempMap::empty()),
        (Some(x), None) => TempMap::from_entries([(x.clone(), TempTarget::Star)]),
        (None, Some(z)) => TempMap::from_entries([(z.clone(), TempTarget::Bottom)]),
        (Some(x), Some(z)) => {
            if x == z {
                return Err(TypeError::ChDuplicate(x.clone()));
            }
            TempMap::from_entries([
                (x.clone(), TempTarget::Name(z.clone())),
                (z.clone(), TempTarget::Bottom),
            ])
        }
    }
}

/// `ch(x̃)` over an actor-argument list of length 0, 1 or 2.
pub fn ch_of_actors(actors: &[Name]) -> Result<TempMap, TypeError> {
    match actors {
        [] => ch_map(None, None),
        [x] => ch_map(Some(x), None),
        [x, z] => ch_map(Some(x), Some(z)),
        _ => Err(TypeError::ChDuplicate(actors[0].clone())),
    }
}

/// `f1 ⊕ f2` as a standalone operation.
pub fn merge_temp_maps(f1: &TempMap, f2: &TempMap) -> Result<TempMap, TypeError> {
    f1.merge(f2)
}

/// Compute the unique typing judgement of a configuration.
pub fn typecheck(p: &Config, defs: &Behaviors) -> Result<TypeJudgement, TypeError> {
    match p {
        Config::Nil => Ok(TypeJudgement::empty()),
        Config::Msg { cont, .. } => match cont {
            // Bare output: the MSG axiom.
            None => Ok(TypeJudgement::empty()),
            // Prefixed output composes the MSG judgement with the
            // continuation's, which leaves the continuation's judgement.
            Some(c) => typecheck(c, defs),
        },
        Config::Input {
            subject,
            binder,
            body,
        } => {
            let body_j = typecheck(body, defs)?;
            act_rule(subject, binder, &body_j)
        }
        Config::Restrict { binder, body } => {
            let body_j = typecheck(body, defs)?;
            let mut rho = body_j.receptionists.clone();
            rho.remove(binder);
            let f = body_j.temp_map.restrict(&rho);
            f.validate()?;
            Ok(TypeJudgement {
                receptionists: rho,
                temp_map: f,
            })
        }
        Config::Case { branches, .. } => {
            let mut rho = BTreeSet::new();
            let mut f = TempMap::empty();
            for (_, b) in branches {
                let j = typecheck(b, defs)?;
                rho.extend(j.receptionists);
                f = f.merge(&j.temp_map).map_err(|e| match e {
                    TypeError::Incompatible(n) => TypeError::CaseIncompatible(n),
                    other => other,
                })?;
            }
            Ok(TypeJudgement {
                receptionists: rho,
                temp_map: f,
            })
        }
        Config::Par(l, r) => {
            let jl = typecheck(l, defs)?;
            let jr = typecheck(r, defs)?;
            comp_rule(&jl, &jr)
        }
        Config::Inst {
            behavior,
            actor_args,
            ..
        } => {
            if !defs.contains_key(behavior) {
                return Err(TypeError::UndefinedBehavior(behavior.0.clone()));
            }
            if actor_args.len() == 2 && actor_args[0] == actor_args[1] {
                return Err(TypeError::InstDuplicateActors(actor_args[0].clone()));
            }
            Ok(TypeJudgement {
                receptionists: actor_args.iter().cloned().collect(),
                temp_map: ch_of_actors(actor_args)?,
            })
        }
        Config::Tau(body) => typecheck(body, defs),
        Config::Step { prefixes, body } => {
            // Output heads contribute the MSG judgement; each input head is
            // an ACT application, nested over the body in sorted order.
            let mut j = typecheck(body, defs)?;
            let mut inputs: Vec<(&Name, &Name)> = prefixes
                .iter()
                .filter_map(|pre| match pre {
                    Prefix::In { subject, binder } => Some((subject, binder)),
                    Prefix::Out { .. } => None,
                })
                .collect();
            inputs.sort();
            for (subject, binder) in inputs.into_iter().rev() {
                j = act_rule(subject, binder, &j)?;
            }
            Ok(j)
        }
    }
}

/// The ACT rule: subject `x`, binder `y`, body judgement `rho; f`.
/// Requires `rho - {x} = ẑ` with at most one temporary name, `y ∉ rho`, and
/// `f = ch(x,ẑ)` when `x ∈ rho`, `f = ch(eps,ẑ)` otherwise. The conclusion
/// is `{x} ∪ ẑ; ch(x,ẑ)`.
fn act_rule(subject: &Name, binder: &Name, body: &TypeJudgement) -> Result<TypeJudgement, TypeError> {
    if body.receptionists.contains(binder) {
        return Err(TypeError::ActBinderInRho(binder.clone()));
    }
    let mut z_hat: BTreeSet<Name> = body.receptionists.clone();
    z_hat.remove(subject);
    if z_hat.len() > 1 {
        return Err(TypeError::ActTooManyTemps {
            subject: subject.clone(),
            rho: body.receptionists.clone(),
        });
    }
    let z = z_hat.iter().next().cloned();
    let expected = if body.receptionists.contains(subject) {
        ch_map(Some(subject), z.as_ref())?
    } else {
        match &z {
            Some(z) => ch_map(None, Some(z))?,
            None => TempMap::empty(),
        }
    };
    if body.temp_map != expected {
        return Err(TypeError::ActBadBodyMap {
            subject: subject.clone(),
            expected,
        });
    }
    let conclusion_map = ch_map(Some(subject), z.as_ref())?;
    let mut rho = z_hat;
    rho.insert(subject.clone());
    Ok(TypeJudgement {
        receptionists: rho,
        temp_map: conclusion_map,
    })
}

fn comp_rule(jl: &TypeJudgement, jr: &TypeJudgement) -> Result<TypeJudgement, TypeError> {
    let overlap: BTreeSet<Name> = jl
        .receptionists
        .intersection(&jr.receptionists)
        .cloned()
        .collect();
    if !overlap.is_empty() {
        return Err(TypeError::CompOverlap(overlap));
    }
    let mut rho = jl.receptionists.clone();
    rho.extend(jr.receptionists.iter().cloned());
    Ok(TypeJudgement {
        receptionists: rho,
        temp_map: jl.temp_map.merge(&jr.temp_map)?,
    })
}

/// Validate that a behavior's unfolded body types to its declared interface
/// `({x̃}, ch(x̃))`, which is what keeps instantiations sound under
/// unfolding.
pub fn check_behavior_def(def: &crate::syntax::BehaviorDef, defs: &Behaviors) -> Result<(), TypeError> {
    let j = typecheck(&def.body, defs)?;
    let expected_rho: BTreeSet<Name> = def.actor_params.iter().cloned().collect();
    let expected_map = ch_of_actors(&def.actor_params)?;
    if j.receptionists != expected_rho || j.temp_map != expected_map {
        return Err(TypeError::BadBehaviorTyping {
            id: def.id.0.clone(),
            got_rho: j.receptionists,
        });
    }
    Ok(())
}

/// Per-clause report for the typing theorem's checkable consequences.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TheoremReport {
    /// `rho ⊆ fn(P)` (inclusion read non-strict).
    pub rho_subset_fn: bool,
    /// `f(x) != x` for all receptionists.
    pub no_self_map: bool,
    /// `f*(f(x)) = ⊥` for all receptionists.
    pub double_map_bottom: bool,
    /// `f(x) = f(y) ∉ {⊥,*}` implies `x = y`.
    pub injective_on_names: bool,
}

impl TheoremReport {
    pub fn all_pass(&self) -> bool {
        self.rho_subset_fn && self.no_self_map && self.double_map_bottom && self.injective_on_names
    }
}

/// Check the four clauses of the typing theorem on a well-typed term.
pub fn check_typing_theorem(p: &Config, defs: &Behaviors) -> Result<TheoremReport, TypeError> {
    let j = typecheck(p, defs)?;
    let fns = free_names(p);
    let rho_subset_fn = j.receptionists.iter().all(|n| fns.contains(n));
    let mut no_self_map = true;
    let mut double_map_bottom = true;
    let mut injective_on_names = true;
    let mut seen_targets: BTreeSet<&Name> = BTreeSet::new();
    for (k, v) in j.temp_map.iter() {
        match v {
            TempTarget::Name(t) => {
                if t == k {
                    no_self_map = false;
                }
                match j.temp_map.get(t) {
                    Some(TempTarget::Bottom) => {}
                    _ => double_map_bottom = false,
                }
                if !seen_targets.insert(t) {
                    injective_on_names = false;
                }
            }
            TempTarget::Bottom | TempTarget::Star => {}
        }
    }
    Ok(TheoremReport {
        rho_subset_fn,
        no_self_map,
        double_map_bottom,
        injective_on_names,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{parse, parse_config};

    fn n(s: &str) -> Name {
        Name::src(s)
    }

    fn check(text: &str) -> Result<TypeJudgement, TypeError> {
        typecheck(&parse_config(text).unwrap(), &Behaviors::new())
    }

    #[test]
    fn msg_axiom() {
        let j = check("x!y").unwrap();
        assert_eq!(j, TypeJudgement::empty());
    }

    #[test]
    fn single_input_actor() {
        // forced by ACT with empty body receptionists
        let j = check("x?(u).0").unwrap();
        let rho: BTreeSet<_> = [n("x")].into_iter().collect();
        assert_eq!(j.receptionists, rho);
        assert_eq!(j.temp_map, ch_map(Some(&n("x")), None).unwrap());
    }

    #[test]
    fn comp_overlap_rejected() {
        let err = check("x?(u).0 | x?(v).0").unwrap_err();
        assert!(matches!(err, TypeError::CompOverlap(_)));
    }

    #[test]
    fn ch_map_cases() {
        assert_eq!(ch_map(None, None).unwrap(), TempMap::empty());
        assert_eq!(
            ch_map(Some(&n("x")), None).unwrap(),
            TempMap::from_entries([(n("x"), TempTarget::Star)]).unwrap()
        );
        // unique map on {x,z} satisfying f(x)!=x, f*(f(x))=bot, injectivity
        assert_eq!(
            ch_map(Some(&n("x")), Some(&n("z"))).unwrap(),
            TempMap::from_entries([
                (n("x"), TempTarget::Name(n("z"))),
                (n("z"), TempTarget::Bottom)
            ])
            .unwrap()
        );
        assert_eq!(
            ch_map(None, Some(&n("z"))).unwrap(),
            TempMap::from_entries([(n("z"), TempTarget::Bottom)]).unwrap()
        );
        assert!(ch_map(Some(&n("x")), Some(&n("x"))).is_err());
    }

    #[test]
    fn merge_cases() {
        let fx = ch_map(Some(&n("x")), None).unwrap();
        let fy = ch_map(Some(&n("y")), None).unwrap();
        let merged = merge_temp_maps(&fx, &fy).unwrap();
        assert_eq!(
            merged,
            TempMap::from_entries([(n("x"), TempTarget::Star), (n("y"), TempTarget::Star)])
                .unwrap()
        );
        assert_eq!(merge_temp_maps(&fx, &fx).unwrap(), fx);
        // disagreement at x
        let fxz = ch_map(Some(&n("x")), Some(&n("z"))).unwrap();
        assert!(matches!(
            merge_temp_maps(&fxz, &fx),
            Err(TypeError::Incompatible(_))
        ));
    }

    #[test]
    fn inst_typing() {
        let (p, defs) = parse("B<x,z;>", "def B(x,z;) = x?(u).B<x,z;>").unwrap();
        let j = typecheck(&p, &defs).unwrap();
        let rho: BTreeSet<_> = [n("x"), n("z")].into_iter().collect();
        assert_eq!(j.receptionists, rho);
        assert_eq!(j.temp_map, ch_map(Some(&n("x")), Some(&n("z"))).unwrap());
    }

    #[test]
    fn inst_duplicate_actors_rejected() {
        let (p, defs) = parse("B<x,x;>", "def B(x,z;) = x?(u).B<x,z;>").unwrap();
        assert!(matches!(
            typecheck(&p, &defs),
            Err(TypeError::InstDuplicateActors(_))
        ));
    }

    #[test]
    fn diverge_def_is_well_typed() {
        let (_, defs) = parse("0", "def Diverge(x;) = x?(u).(x!u | Diverge<x;>)").unwrap();
        let def = defs.values().next().unwrap();
        check_behavior_def(def, &defs).unwrap();
    }

    #[test]
    fn restriction_drops_receptionist() {
        let j = check("nu x. x?(u).0").unwrap();
        assert!(j.receptionists.is_empty());
        assert!(j.temp_map.is_empty());
    }

    #[test]
    fn restriction_dangling_temp_target_becomes_star() {
        let (p, defs) = parse("nu z. B<x,z;>", "def B(x,z;) = x?(u).B<x,z;>").unwrap();
        let j = typecheck(&p, &defs).unwrap();
        let rho: BTreeSet<_> = [n("x")].into_iter().collect();
        assert_eq!(j.receptionists, rho);
        assert_eq!(j.temp_map, ch_map(Some(&n("x")), None).unwrap());
    }

    #[test]
    fn theorem_clauses_hold() {
        let p = parse_config("x?(u).0").unwrap();
        let report = check_typing_theorem(&p, &Behaviors::new()).unwrap();
        assert!(report.all_pass());
        // vacuous on 0
        let report = check_typing_theorem(&Config::Nil, &Behaviors::new()).unwrap();
        assert!(report.all_pass());
    }

    #[test]
    fn tau_and_prefixed_output_inherit_judgement() {
        let j = check("tau.x?(u).0").unwrap();
        let rho: BTreeSet<_> = [n("x")].into_iter().collect();
        assert_eq!(j.receptionists, rho);
        let j = check("a!b.x?(u).0").unwrap();
        assert_eq!(j.receptionists, rho);
    }

    #[test]
    fn step_prefix_types_like_separate_prefixes() {
        // (u!v & x?(y)).0 should type like x?(y).0 composed with u!v
        let j = check("(u!v & x?(y)).0").unwrap();
        let rho: BTreeSet<_> = [n("x")].into_iter().collect();
        assert_eq!(j.receptionists, rho);
        assert_eq!(j.temp_map, ch_map(Some(&n("x")), None).unwrap());
    }

    #[test]
    fn determinism() {
        let p = parse_config("nu a. (a?(u).0 | b?(v).0)").unwrap();
        let j1 = typecheck(&p, &Behaviors::new()).unwrap();
        let j2 = typecheck(&p, &Behaviors::new()).unwrap();
        assert_eq!(j1, j2);
    }
}
