//! Abstract syntax of configurations: names, terms, behavior definitions,
//! the name algebra (free/bound names, substitution, alpha-equivalence) and
//! canonical forms used for state identity.

mod parse;
mod print;

pub use parse::{parse, parse_config, parse_defs, parse_file, ParseError};
pub use print::pretty_print;

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

static GEN_COUNTER: AtomicU64 = AtomicU64::new(0);

/// A channel / actor name. `Src` names come from source text; `Gen` names are
/// allocated from a global counter and can never collide with source names or
/// each other; `Canon` names are the deterministic binder family used by
/// [`canonicalize`].
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum Name {
    Src(String),
    Gen(u64),
    Canon(u32),
}

impl Name {
    pub fn src(s: &str) -> Name {
        Name::Src(s.to_string())
    }

    /// A globally fresh generated name.
    pub fn gen_fresh() -> Name {
        Name::Gen(GEN_COUNTER.fetch_add(1, Ordering::Relaxed))
    }

    /// Deterministic parseable fresh name: the first of `w0, w1, ...` not in
    /// `avoid`. Used for input witnesses and bound-action binders in labels,
    /// so that states stay printable and constructions stay reproducible.
    pub fn fresh_src(avoid: &BTreeSet<Name>) -> Name {
        for i in 0.. {
            let cand = Name::Src(format!("w{i}"));
            if !avoid.contains(&cand) {
                return cand;
            }
        }
        unreachable!()
    }

    pub fn is_source(&self) -> bool {
        matches!(self, Name::Src(_))
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Name::Src(s) => write!(f, "{s}"),
            Name::Gen(n) => write!(f, "%g{n}"),
            Name::Canon(i) => write!(f, "%c{i}"),
        }
    }
}

/// Identifier of a behavior definition.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct BehaviorId(pub String);

impl fmt::Display for BehaviorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An atomic prefix inside a joint prefix `(a & b).P`: either an output head
/// `x!y` or an input head `x?(v)` whose binder scopes over the body.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum Prefix {
    Out { subject: Name, object: Name },
    In { subject: Name, binder: Name },
}

impl Prefix {
    pub fn subject(&self) -> &Name {
        match self {
            Prefix::Out { subject, .. } | Prefix::In { subject, .. } => subject,
        }
    }
}

/// A configuration term.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum Config {
    /// Inert configuration `0`.
    Nil,
    /// Output `x!y` (bare when `cont` is `None`, prefixed `x!y.P` otherwise).
    Msg {
        subject: Name,
        object: Name,
        cont: Option<Box<Config>>,
    },
    /// Input `x?(y).P`; `binder` scopes over `body`.
    Input {
        subject: Name,
        binder: Name,
        body: Box<Config>,
    },
    /// Restriction `nu x. P`.
    Restrict { binder: Name, body: Box<Config> },
    /// Guarded branching `case x of { y1: P1, ..., yn: Pn }`.
    Case {
        scrutinee: Name,
        branches: Vec<(Name, Config)>,
    },
    /// Parallel composition.
    Par(Box<Config>, Box<Config>),
    /// Behavior instantiation `B<actors; values>`.
    Inst {
        behavior: BehaviorId,
        actor_args: Vec<Name>,
        param_args: Vec<Name>,
    },
    /// Silent prefix `tau.P`.
    Tau(Box<Config>),
    /// Joint prefix `(a1 & ... & an).P`, at least two atomic prefixes.
    Step {
        prefixes: Vec<Prefix>,
        body: Box<Config>,
    },
}

impl Config {
    pub fn msg(subject: Name, object: Name) -> Config {
        Config::Msg {
            subject,
            object,
            cont: None,
        }
    }

    pub fn input(subject: Name, binder: Name, body: Config) -> Config {
        Config::Input {
            subject,
            binder,
            body: Box::new(body),
        }
    }

    pub fn restrict(binder: Name, body: Config) -> Config {
        Config::Restrict {
            binder,
            body: Box::new(body),
        }
    }

    pub fn par(left: Config, right: Config) -> Config {
        Config::Par(Box::new(left), Box::new(right))
    }

    pub fn tau(body: Config) -> Config {
        Config::Tau(Box::new(body))
    }
}

/// A behavior definition `def B(x1,x2; y1,...) = x1?(z).P`.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct BehaviorDef {
    pub id: BehaviorId,
    pub actor_params: Vec<Name>,
    pub value_params: Vec<Name>,
    /// Invariant: outermost constructor is an input on the first actor param.
    pub body: Config,
}

/// Behavior table keyed by identifier.
pub type Behaviors = BTreeMap<BehaviorId, BehaviorDef>;

/// A finite-domain name substitution, the identity elsewhere.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Subst {
    map: BTreeMap<Name, Name>,
}

impl Subst {
    pub fn new() -> Subst {
        Subst::default()
    }

    pub fn single(from: Name, to: Name) -> Subst {
        let mut s = Subst::new();
        s.bind(from, to);
        s
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Name, Name)>) -> Subst {
        let mut s = Subst::new();
        for (from, to) in pairs {
            s.bind(from, to);
        }
        s
    }

    /// Add a binding; identity bindings are dropped.
    pub fn bind(&mut self, from: Name, to: Name) {
        if from == to {
            self.map.remove(&from);
        } else {
            self.map.insert(from, to);
        }
    }

    pub fn apply(&self, n: &Name) -> Name {
        self.map.get(n).cloned().unwrap_or_else(|| n.clone())
    }

    pub fn domain(&self) -> impl Iterator<Item = &Name> {
        self.map.keys()
    }

    pub fn range(&self) -> impl Iterator<Item = &Name> {
        self.map.values()
    }

    pub fn without(&self, binder: &Name) -> Subst {
        let mut map = self.map.clone();
        map.remove(binder);
        Subst { map }
    }

    pub fn is_identity(&self) -> bool {
        self.map.is_empty()
    }

    /// Whether the substitution is injective on the given set.
    pub fn one_to_one_on(&self, set: &BTreeSet<Name>) -> bool {
        let images: BTreeSet<Name> = set.iter().map(|n| self.apply(n)).collect();
        images.len() == set.len()
    }
}

/// Free names following the defining clauses literally: a `case` contributes
/// only its branch bodies (neither scrutinee nor guards), and an
/// instantiation contributes all of its arguments.
pub fn free_names(p: &Config) -> BTreeSet<Name> {
    let mut out = BTreeSet::new();
    collect_free(p, &mut out);
    out
}

fn collect_free(p: &Config, out: &mut BTreeSet<Name>) {
    match p {
        Config::Nil => {}
        Config::Msg {
            subject,
            object,
            cont,
        } => {
            out.insert(subject.clone());
            out.insert(object.clone());
            if let Some(c) = cont {
                collect_free(c, out);
            }
        }
        Config::Input {
            subject,
            binder,
            body,
        } => {
            let mut inner = BTreeSet::new();
            collect_free(body, &mut inner);
            inner.insert(subject.clone());
            inner.remove(binder);
            out.extend(inner);
        }
        Config::Restrict { binder, body } => {
            let mut inner = BTreeSet::new();
            collect_free(body, &mut inner);
            inner.remove(binder);
            out.extend(inner);
        }
        Config::Case { branches, .. } => {
            for (_, b) in branches {
                collect_free(b, out);
            }
        }
        Config::Par(l, r) => {
            collect_free(l, out);
            collect_free(r, out);
        }
        Config::Inst {
            actor_args,
            param_args,
            ..
        } => {
            out.extend(actor_args.iter().cloned());
            out.extend(param_args.iter().cloned());
        }
        Config::Tau(body) => collect_free(body, out),
        Config::Step { prefixes, body } => {
            let mut inner = BTreeSet::new();
            collect_free(body, &mut inner);
            for pre in prefixes {
                if let Prefix::In { binder, .. } = pre {
                    inner.remove(binder);
                }
            }
            for pre in prefixes {
                match pre {
                    Prefix::Out { subject, object } => {
                        inner.insert(subject.clone());
                        inner.insert(object.clone());
                    }
                    Prefix::In { subject, .. } => {
                        inner.insert(subject.clone());
                    }
                }
            }
            out.extend(inner);
        }
    }
}

/// Every name occurring anywhere in the term (the `n(P)` of `bn(P)=n(P)-fn(P)`).
pub fn all_names(p: &Config) -> BTreeSet<Name> {
    let mut out = BTreeSet::new();
    collect_all(p, &mut out);
    out
}

fn collect_all(p: &Config, out: &mut BTreeSet<Name>) {
    match p {
        Config::Nil => {}
        Config::Msg {
            subject,
            object,
            cont,
        } => {
            out.insert(subject.clone());
            out.insert(object.clone());
            if let Some(c) = cont {
                collect_all(c, out);
            }
        }
        Config::Input {
            subject,
            binder,
            body,
        } => {
            out.insert(subject.clone());
            out.insert(binder.clone());
            collect_all(body, out);
        }
        Config::Restrict { binder, body } => {
            out.insert(binder.clone());
            collect_all(body, out);
        }
        Config::Case {
            scrutinee,
            branches,
        } => {
            out.insert(scrutinee.clone());
            for (g, b) in branches {
                out.insert(g.clone());
                collect_all(b, out);
            }
        }
        Config::Par(l, r) => {
            collect_all(l, out);
            collect_all(r, out);
        }
        Config::Inst {
            actor_args,
            param_args,
            ..
        } => {
            out.extend(actor_args.iter().cloned());
            out.extend(param_args.iter().cloned());
        }
        Config::Tau(body) => collect_all(body, out),
        Config::Step { prefixes, body } => {
            for pre in prefixes {
                match pre {
                    Prefix::Out { subject, object } => {
                        out.insert(subject.clone());
                        out.insert(object.clone());
                    }
                    Prefix::In { subject, binder } => {
                        out.insert(subject.clone());
                        out.insert(binder.clone());
                    }
                }
            }
            collect_all(body, out);
        }
    }
}

/// Bound names per the defining equation `bn(P) = n(P) - fn(P)`.
pub fn bound_names(p: &Config) -> BTreeSet<Name> {
    let fns = free_names(p);
    all_names(p).into_iter().filter(|n| !fns.contains(n)).collect()
}

/// Names with a free *occurrence*, counting case scrutinees and guards.
/// This is the set substitution must protect against capture; it differs
/// from [`free_names`], whose case clause ignores the scrutinee.
pub fn occurring_free_names(p: &Config) -> BTreeSet<Name> {
    let mut out = BTreeSet::new();
    occ_free(p, &mut Vec::new(), &mut out);
    out
}

fn occ_name(n: &Name, bound: &[Name], out: &mut BTreeSet<Name>) {
    if !bound.iter().rev().any(|b| b == n) {
        out.insert(n.clone());
    }
}

fn occ_free(p: &Config, bound: &mut Vec<Name>, out: &mut BTreeSet<Name>) {
    match p {
        Config::Nil => {}
        Config::Msg {
            subject,
            object,
            cont,
        } => {
            occ_name(subject, bound, out);
            occ_name(object, bound, out);
            if let Some(c) = cont {
                occ_free(c, bound, out);
            }
        }
        Config::Input {
            subject,
            binder,
            body,
        } => {
            occ_name(subject, bound, out);
            bound.push(binder.clone());
            occ_free(body, bound, out);
            bound.pop();
        }
        Config::Restrict { binder, body } => {
            bound.push(binder.clone());
            occ_free(body, bound, out);
            bound.pop();
        }
        Config::Case {
            scrutinee,
            branches,
        } => {
            occ_name(scrutinee, bound, out);
            for (g, b) in branches {
                occ_name(g, bound, out);
                occ_free(b, bound, out);
            }
        }
        Config::Par(l, r) => {
            occ_free(l, bound, out);
            occ_free(r, bound, out);
        }
        Config::Inst {
            actor_args,
            param_args,
            ..
        } => {
            for n in actor_args.iter().chain(param_args) {
                occ_name(n, bound, out);
            }
        }
        Config::Tau(body) => occ_free(body, bound, out),
        Config::Step { prefixes, body } => {
            for pre in prefixes {
                match pre {
                    Prefix::Out { subject, object } => {
                        occ_name(subject, bound, out);
                        occ_name(object, bound, out);
                    }
                    Prefix::In { subject, .. } => occ_name(subject, bound, out),
                }
            }
            let n_binders = prefixes
                .iter()
                .filter_map(|pre| match pre {
                    Prefix::In { binder, .. } => Some(binder.clone()),
                    _ => None,
                })
                .collect::<Vec<_>>();
            let len = n_binders.len();
            bound.extend(n_binders);
            occ_free(body, bound, out);
            for _ in 0..len {
                bound.pop();
            }
        }
    }
}

/// Capture-avoiding substitution. Binders are freshened whenever they occur
/// in the domain or range of the substitution, so no free name of the range
/// is captured and the result is independent of the input representative up
/// to alpha-equivalence.
pub fn substitute(p: &Config, s: &Subst) -> Config {
    if s.is_identity() {
        return p.clone();
    }
    match p {
        Config::Nil => Config::Nil,
        Config::Msg {
            subject,
            object,
            cont,
        } => Config::Msg {
            subject: s.apply(subject),
            object: s.apply(object),
            cont: cont.as_ref().map(|c| Box::new(substitute(c, s))),
        },
        Config::Input {
            subject,
            binder,
            body,
        } => {
            // After freshening, the binder is outside dom and range of s, so
            // s can be applied to the body unchanged.
            let (binder, body) = freshen_binder(binder, body, s);
            let inner = s.without(&binder);
            Config::Input {
                subject: s.apply(subject),
                binder,
                body: Box::new(substitute(&body, &inner)),
            }
        }
        Config::Restrict { binder, body } => {
            let (binder, body) = freshen_binder(binder, body, s);
            let inner = s.without(&binder);
            Config::Restrict {
                binder,
                body: Box::new(substitute(&body, &inner)),
            }
        }
        Config::Case {
            scrutinee,
            branches,
        } => Config::Case {
            scrutinee: s.apply(scrutinee),
            branches: branches
                .iter()
                .map(|(g, b)| (s.apply(g), substitute(b, s)))
                .collect(),
        },
        Config::Par(l, r) => Config::par(substitute(l, s), substitute(r, s)),
        Config::Inst {
            behavior,
            actor_args,
            param_args,
        } => Config::Inst {
            behavior: behavior.clone(),
            actor_args: actor_args.iter().map(|n| s.apply(n)).collect(),
            param_args: param_args.iter().map(|n| s.apply(n)).collect(),
        },
        Config::Tau(body) => Config::tau(substitute(body, s)),
        Config::Step { prefixes, body } => {
            let mut body = (**body).clone();
            let mut out_prefixes = Vec::with_capacity(prefixes.len());
            for pre in prefixes {
                match pre {
                    Prefix::Out { subject, object } => out_prefixes.push(Prefix::Out {
                        subject: s.apply(subject),
                        object: s.apply(object),
                    }),
                    Prefix::In { subject, binder } => {
                        let (binder, freshened) = freshen_binder(binder, &body, s);
                        body = freshened;
                        out_prefixes.push(Prefix::In {
                            subject: s.apply(subject),
                            binder,
                        });
                    }
                }
            }
            let binders: BTreeSet<Name> = out_prefixes
                .iter()
                .filter_map(|pre| match pre {
                    Prefix::In { binder, .. } => Some(binder.clone()),
                    _ => None,
                })
                .collect();
            let mut inner = s.clone();
            for b in &binders {
                inner = inner.without(b);
            }
            Config::Step {
                prefixes: out_prefixes,
                body: Box::new(substitute(&body, &inner)),
            }
        }
    }
}

/// If the binder collides with the substitution's domain or range, rename it
/// (and its occurrences in the body) to a globally fresh generated name.
fn freshen_binder(binder: &Name, body: &Config, s: &Subst) -> (Name, Config) {
    let collides = s.domain().any(|d| d == binder) || s.range().any(|r| r == binder);
    if collides {
        let fresh = Name::gen_fresh();
        let renamed = substitute(body, &Subst::single(binder.clone(), fresh.clone()));
        (fresh, renamed)
    } else {
        (binder.clone(), body.clone())
    }
}

/// Alpha-equivalence: equality up to consistent renaming of bound names.
pub fn alpha_eq(p: &Config, q: &Config) -> bool {
    alpha_rec(p, q, &mut Vec::new())
}

fn name_eq(a: &Name, b: &Name, env: &[(Name, Name)]) -> bool {
    for (x, y) in env.iter().rev() {
        let la = x == a;
        let lb = y == b;
        if la || lb {
            return la && lb;
        }
    }
    a == b
}

fn alpha_rec(p: &Config, q: &Config, env: &mut Vec<(Name, Name)>) -> bool {
    match (p, q) {
        (Config::Nil, Config::Nil) => true,
        (
            Config::Msg {
                subject: s1,
                object: o1,
                cont: c1,
            },
            Config::Msg {
                subject: s2,
                object: o2,
                cont: c2,
            },
        ) => {
            name_eq(s1, s2, env)
                && name_eq(o1, o2, env)
                && match (c1, c2) {
                    (None, None) => true,
                    (Some(a), Some(b)) => alpha_rec(a, b, env),
                    _ => false,
                }
        }
        (
            Config::Input {
                subject: s1,
                binder: b1,
                body: p1,
            },
            Config::Input {
                subject: s2,
                binder: b2,
                body: p2,
            },
        ) => {
            if !name_eq(s1, s2, env) {
                return false;
            }
            env.push((b1.clone(), b2.clone()));
            let r = alpha_rec(p1, p2, env);
            env.pop();
            r
        }
        (
            Config::Restrict {
                binder: b1,
                body: p1,
            },
            Config::Restrict {
                binder: b2,
                body: p2,
            },
        ) => {
            env.push((b1.clone(), b2.clone()));
            let r = alpha_rec(p1, p2, env);
            env.pop();
            r
        }
        (
            Config::Case {
                scrutinee: x1,
                branches: bs1,
            },
            Config::Case {
                scrutinee: x2,
                branches: bs2,
            },
        ) => {
            name_eq(x1, x2, env)
                && bs1.len() == bs2.len()
                && bs1
                    .iter()
                    .zip(bs2)
                    .all(|((g1, p1), (g2, p2))| name_eq(g1, g2, env) && alpha_rec(p1, p2, env))
        }
        (Config::Par(l1, r1), Config::Par(l2, r2)) => {
            alpha_rec(l1, l2, env) && alpha_rec(r1, r2, env)
        }
        (
            Config::Inst {
                behavior: b1,
                actor_args: a1,
                param_args: v1,
            },
            Config::Inst {
                behavior: b2,
                actor_args: a2,
                param_args: v2,
            },
        ) => {
            b1 == b2
                && a1.len() == a2.len()
                && v1.len() == v2.len()
                && a1.iter().zip(a2).all(|(x, y)| name_eq(x, y, env))
                && v1.iter().zip(v2).all(|(x, y)| name_eq(x, y, env))
        }
        (Config::Tau(p1), Config::Tau(p2)) => alpha_rec(p1, p2, env),
        (
            Config::Step {
                prefixes: pre1,
                body: p1,
            },
            Config::Step {
                prefixes: pre2,
                body: p2,
            },
        ) => {
            if pre1.len() != pre2.len() {
                return false;
            }
            // Joint prefixes are a set: try every pairing of matching heads.
            let indices: Vec<usize> = (0..pre2.len()).collect();
            permutations(&indices).into_iter().any(|perm| {
                let mut local = env.clone();
                for (i, &j) in perm.iter().enumerate() {
                    match (&pre1[i], &pre2[j]) {
                        (
                            Prefix::Out {
                                subject: s1,
                                object: o1,
                            },
                            Prefix::Out {
                                subject: s2,
                                object: o2,
                            },
                        ) => {
                            if !name_eq(s1, s2, &local) || !name_eq(o1, o2, &local) {
                                return false;
                            }
                        }
                        (
                            Prefix::In {
                                subject: s1,
                                binder: b1,
                            },
                            Prefix::In {
                                subject: s2,
                                binder: b2,
                            },
                        ) => {
                            if !name_eq(s1, s2, &local) {
                                return false;
                            }
                            local.push((b1.clone(), b2.clone()));
                        }
                        _ => return false,
                    }
                }
                alpha_rec(p1, p2, &mut local)
            })
        }
        _ => false,
    }
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (i, &x) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

/// Canonical representative of the alpha-class: binders are renamed to the
/// `Canon` family in deterministic traversal order, so canonical forms of
/// alpha-equivalent terms are structurally equal and usable as state keys.
pub fn canonicalize(p: &Config) -> Config {
    // Skip canonical indices already occurring free, so re-canonicalizing a
    // subterm of a canonical term cannot capture.
    let taken: BTreeSet<u32> = occurring_free_names(p)
        .into_iter()
        .filter_map(|n| match n {
            Name::Canon(i) => Some(i),
            _ => None,
        })
        .collect();
    let mut alloc = CanonAlloc { next: 0, taken };
    canon_rec(p, &mut Vec::new(), &mut alloc)
}

struct CanonAlloc {
    next: u32,
    taken: BTreeSet<u32>,
}

impl CanonAlloc {
    fn fresh(&mut self) -> Name {
        while self.taken.contains(&self.next) {
            self.next += 1;
        }
        let n = Name::Canon(self.next);
        self.next += 1;
        n
    }
}

fn canon_name(n: &Name, env: &[(Name, Name)]) -> Name {
    for (orig, canon) in env.iter().rev() {
        if orig == n {
            return canon.clone();
        }
    }
    n.clone()
}

fn canon_rec(p: &Config, env: &mut Vec<(Name, Name)>, alloc: &mut CanonAlloc) -> Config {
    match p {
        Config::Nil => Config::Nil,
        Config::Msg {
            subject,
            object,
            cont,
        } => Config::Msg {
            subject: canon_name(subject, env),
            object: canon_name(object, env),
            cont: cont.as_ref().map(|c| Box::new(canon_rec(c, env, alloc))),
        },
        Config::Input {
            subject,
            binder,
            body,
        } => {
            let subject = canon_name(subject, env);
            let fresh = alloc.fresh();
            env.push((binder.clone(), fresh.clone()));
            let body = canon_rec(body, env, alloc);
            env.pop();
            Config::Input {
                subject,
                binder: fresh,
                body: Box::new(body),
            }
        }
        Config::Restrict { binder, body } => {
            let fresh = alloc.fresh();
            env.push((binder.clone(), fresh.clone()));
            let body = canon_rec(body, env, alloc);
            env.pop();
            Config::Restrict {
                binder: fresh,
                body: Box::new(body),
            }
        }
        Config::Case {
            scrutinee,
            branches,
        } => Config::Case {
            scrutinee: canon_name(scrutinee, env),
            branches: branches
                .iter()
                .map(|(g, b)| (canon_name(g, env), canon_rec(b, env, alloc)))
                .collect(),
        },
        Config::Par(l, r) => Config::par(canon_rec(l, env, alloc), canon_rec(r, env, alloc)),
        Config::Inst {
            behavior,
            actor_args,
            param_args,
        } => Config::Inst {
            behavior: behavior.clone(),
            actor_args: actor_args.iter().map(|n| canon_name(n, env)).collect(),
            param_args: param_args.iter().map(|n| canon_name(n, env)).collect(),
        },
        Config::Tau(body) => Config::tau(canon_rec(body, env, alloc)),
        Config::Step { prefixes, body } => {
            // Sort prefixes by their resolved heads; binders are not part of
            // the key, so tied input groups are resolved by trying each
            // order and keeping the least result.
            let resolved: Vec<(u8, Name, Option<Name>, usize)> = prefixes
                .iter()
                .enumerate()
                .map(|(i, pre)| match pre {
                    Prefix::Out { subject, object } => {
                        (0u8, canon_name(subject, env), Some(canon_name(object, env)), i)
                    }
                    Prefix::In { subject, .. } => (1u8, canon_name(subject, env), None, i),
                })
                .collect();
            let mut groups: BTreeMap<(u8, Name, Option<Name>), Vec<usize>> = BTreeMap::new();
            for (k, s, o, i) in resolved {
                groups.entry((k, s, o)).or_default().push(i);
            }
            let mut best: Option<Config> = None;
            for order in group_orderings(&groups) {
                let mut local = env.clone();
                let mut new_prefixes = Vec::with_capacity(order.len());
                let mut local_alloc = CanonAlloc {
                    next: alloc.next,
                    taken: alloc.taken.clone(),
                };
                for &i in &order {
                    match &prefixes[i] {
                        Prefix::Out { subject, object } => new_prefixes.push(Prefix::Out {
                            subject: canon_name(subject, env),
                            object: canon_name(object, env),
                        }),
                        Prefix::In { subject, binder } => {
                            let fresh = local_alloc.fresh();
                            local.push((binder.clone(), fresh.clone()));
                            new_prefixes.push(Prefix::In {
                                subject: canon_name(subject, env),
                                binder: fresh,
                            });
                        }
                    }
                }
                let candidate = Config::Step {
                    prefixes: new_prefixes,
                    body: Box::new(canon_rec(body, &mut local, &mut local_alloc)),
                };
                if best.as_ref().map_or(true, |b| candidate < *b) {
                    best = Some(candidate);
                }
            }
            // Re-run allocation on the winning order so the global counter
            // advances exactly once.
            let winner = best.expect("non-empty prefix list");
            if let Config::Step { prefixes, .. } = &winner {
                for pre in prefixes {
                    if let Prefix::In { .. } = pre {
                        alloc.fresh();
                    }
                }
            }
            advance_alloc(&winner, alloc);
            winner
        }
    }
}

fn advance_alloc(p: &Config, alloc: &mut CanonAlloc) {
    // Step bodies were canonicalized with a cloned allocator; replay the
    // binder count so subsequent siblings keep globally unique indices.
    match p {
        Config::Step { body, .. } => count_binders(body, alloc),
        _ => {}
    }
}

fn count_binders(p: &Config, alloc: &mut CanonAlloc) {
    match p {
        Config::Nil => {}
        Config::Msg { cont, .. } => {
            if let Some(c) = cont {
                count_binders(c, alloc);
            }
        }
        Config::Input { body, .. } => {
            alloc.fresh();
            count_binders(body, alloc);
        }
        Config::Restrict { body, .. } => {
            alloc.fresh();
            count_binders(body, alloc);
        }
        Config::Case { branches, .. } => {
            for (_, b) in branches {
                count_binders(b, alloc);
            }
        }
        Config::Par(l, r) => {
            count_binders(l, alloc);
            count_binders(r, alloc);
        }
        Config::Inst { .. } => {}
        Config::Tau(body) => count_binders(body, alloc),
        Config::Step { prefixes, body } => {
            for pre in prefixes {
                if matches!(pre, Prefix::In { .. }) {
                    alloc.fresh();
                }
            }
            count_binders(body, alloc);
        }
    }
}

fn group_orderings(groups: &BTreeMap<(u8, Name, Option<Name>), Vec<usize>>) -> Vec<Vec<usize>> {
    // Cartesian product of permutations within each tied group, in key order.
    let mut orders: Vec<Vec<usize>> = vec![Vec::new()];
    for members in groups.values() {
        let perms = permutations(members);
        let mut next = Vec::new();
        for base in &orders {
            for p in &perms {
                let mut ext = base.clone();
                ext.extend(p.iter().copied());
                next.push(ext);
            }
        }
        orders = next;
    }
    orders
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(s: &str) -> Name {
        Name::src(s)
    }

    #[test]
    fn free_names_clauses() {
        assert!(free_names(&Config::Nil).is_empty());
        // x?(y).y!z has free names {x, z}
        let p = Config::input(n("x"), n("y"), Config::msg(n("y"), n("z")));
        let expect: BTreeSet<_> = [n("x"), n("z")].into_iter().collect();
        assert_eq!(free_names(&p), expect);
        // nu x. x!y has free names {y}
        let p = Config::restrict(n("x"), Config::msg(n("x"), n("y")));
        let expect: BTreeSet<_> = [n("y")].into_iter().collect();
        assert_eq!(free_names(&p), expect);
    }

    #[test]
    fn case_free_names_are_branch_bodies_only() {
        let p = Config::Case {
            scrutinee: n("x"),
            branches: vec![(n("y"), Config::msg(n("a"), n("b")))],
        };
        let expect: BTreeSet<_> = [n("a"), n("b")].into_iter().collect();
        assert_eq!(free_names(&p), expect);
        // the occurrence-level view still sees x and y
        let occ = occurring_free_names(&p);
        assert!(occ.contains(&n("x")) && occ.contains(&n("y")));
    }

    #[test]
    fn bound_names_difference() {
        let p = Config::input(n("x"), n("y"), Config::msg(n("y"), n("z")));
        let expect: BTreeSet<_> = [n("y")].into_iter().collect();
        assert_eq!(bound_names(&p), expect);
    }

    #[test]
    fn substitute_simple() {
        let p = Config::msg(n("x"), n("y"));
        let q = substitute(&p, &Subst::single(n("x"), n("w")));
        assert_eq!(q, Config::msg(n("w"), n("y")));
    }

    #[test]
    fn substitute_case_clause() {
        let p = Config::Case {
            scrutinee: n("x"),
            branches: vec![(n("y1"), Config::msg(n("x"), n("y1")))],
        };
        let q = substitute(&p, &Subst::single(n("x"), n("z")));
        assert_eq!(
            q,
            Config::Case {
                scrutinee: n("z"),
                branches: vec![(n("y1"), Config::msg(n("z"), n("y1")))],
            }
        );
    }

    #[test]
    fn substitute_avoids_capture() {
        // x?(y).y!x with {y/x}: binder must be freshened, result has free {y}
        let p = Config::input(n("x"), n("y"), Config::msg(n("y"), n("x")));
        let q = substitute(&p, &Subst::single(n("x"), n("y")));
        let expect_free: BTreeSet<_> = [n("y")].into_iter().collect();
        assert_eq!(free_names(&q), expect_free);
        // alpha-class is the expected one: y?(y').y'!y
        let expected = Config::input(n("y"), n("yp"), Config::msg(n("yp"), n("y")));
        assert!(alpha_eq(&q, &expected));
    }

    #[test]
    fn substitute_identity_is_alpha_identity() {
        let p = Config::input(n("x"), n("y"), Config::msg(n("y"), n("z")));
        assert!(alpha_eq(&substitute(&p, &Subst::new()), &p));
    }

    #[test]
    fn alpha_eq_binder_renaming() {
        let p = Config::input(n("x"), n("y"), Config::msg(n("y"), n("y")));
        let q = Config::input(n("x"), n("z"), Config::msg(n("z"), n("z")));
        assert!(alpha_eq(&p, &q));
        let r = Config::input(n("x"), n("z"), Config::msg(n("z"), n("x")));
        assert!(!alpha_eq(&p, &r));
        assert!(alpha_eq(&p, &p));
    }

    #[test]
    fn alpha_eq_distinguishes_free_names() {
        let p = Config::msg(n("x"), n("y"));
        let q = Config::msg(n("x"), n("z"));
        assert!(!alpha_eq(&p, &q));
    }

    #[test]
    fn canonicalize_single_binder() {
        let p = Config::input(n("x"), n("w"), Config::Nil);
        let c = canonicalize(&p);
        assert_eq!(
            c,
            Config::Input {
                subject: n("x"),
                binder: Name::Canon(0),
                body: Box::new(Config::Nil),
            }
        );
    }

    #[test]
    fn canonicalize_identifies_alpha_variants() {
        let p = Config::restrict(n("a"), Config::input(n("a"), n("b"), Config::msg(n("b"), n("a"))));
        let q = Config::restrict(n("u"), Config::input(n("u"), n("v"), Config::msg(n("v"), n("u"))));
        assert_eq!(canonicalize(&p), canonicalize(&q));
        assert!(alpha_eq(&p, &canonicalize(&p)));
    }

    #[test]
    fn canonicalize_separates_non_alpha_variants() {
        let p = Config::input(n("x"), n("y"), Config::msg(n("y"), n("y")));
        let q = Config::input(n("x"), n("y"), Config::msg(n("y"), n("x")));
        assert_ne!(canonicalize(&p), canonicalize(&q));
    }

    #[test]
    fn canonical_binders_do_not_collide_with_free_names() {
        let p = Config::input(n("x"), n("y"), Config::msg(n("y"), n("z")));
        let c = canonicalize(&p);
        let free = free_names(&p);
        for b in bound_names(&c) {
            assert!(!free.contains(&b));
        }
    }

    #[test]
    fn swap_substitution_roundtrip() {
        // substitute(substitute(p,{y/x}),{x/y}) alpha_eq p when y not in names(p)
        let p = Config::input(n("x"), n("v"), Config::msg(n("v"), n("x")));
        let there = substitute(&p, &Subst::single(n("x"), n("y")));
        let back = substitute(&there, &Subst::single(n("y"), n("x")));
        assert!(alpha_eq(&back, &p));
    }

    #[test]
    fn step_prefix_set_semantics() {
        let body = Config::msg(n("v"), n("v"));
        let p = Config::Step {
            prefixes: vec![
                Prefix::Out {
                    subject: n("x"),
                    object: n("y"),
                },
                Prefix::In {
                    subject: n("u"),
                    binder: n("v"),
                },
            ],
            body: Box::new(body.clone()),
        };
        let q = Config::Step {
            prefixes: vec![
                Prefix::In {
                    subject: n("u"),
                    binder: n("w"),
                },
                Prefix::Out {
                    subject: n("x"),
                    object: n("y"),
                },
            ],
            body: Box::new(Config::msg(n("w"), n("w"))),
        };
        assert!(alpha_eq(&p, &q));
        assert_eq!(canonicalize(&p), canonicalize(&q));
    }
}
