//! Pretty-printing back to the concrete grammar.
//!
//! Bound names that would collide with a free name in their scope, or that
//! are not source identifiers (generated or canonical binders), are renamed
//! on the fly, so `parse(pretty_print(p))` is alpha-equivalent to `p`
//! whenever the free names of `p` are source names.

use super::{occurring_free_names, Config, Name, Prefix};
use std::collections::BTreeSet;

/// Render a configuration as parseable text.
pub fn pretty_print(p: &Config) -> String {
    let mut env: Vec<(Name, String)> = Vec::new();
    render(p, &mut env, false)
}

fn render_name(n: &Name, env: &[(Name, String)]) -> String {
    for (orig, s) in env.iter().rev() {
        if orig == n {
            return s.clone();
        }
    }
    n.to_string()
}

/// Choose a rendering for a binder that neither captures a free name of the
/// body nor clashes with an enclosing rendering.
fn binder_string(binder: &Name, body_free: &BTreeSet<String>, env: &[(Name, String)]) -> String {
    let natural = match binder {
        Name::Src(s) => s.clone(),
        _ => "b".to_string(),
    };
    let taken: BTreeSet<&String> = env.iter().map(|(_, s)| s).collect();
    if matches!(binder, Name::Src(_))
        && !body_free.contains(&natural)
        && !taken.contains(&natural)
    {
        return natural;
    }
    for i in 0.. {
        let cand = format!("{natural}{i}");
        if !body_free.contains(&cand) && !taken.contains(&cand) {
            return cand;
        }
    }
    unreachable!()
}

/// Free renderings visible inside a subterm, given the current environment.
fn free_renderings(p: &Config, env: &[(Name, String)]) -> BTreeSet<String> {
    occurring_free_names(p)
        .iter()
        .map(|n| render_name(n, env))
        .collect()
}

fn render(p: &Config, env: &mut Vec<(Name, String)>, parens_for_par: bool) -> String {
    match p {
        Config::Nil => "0".to_string(),
        Config::Msg {
            subject,
            object,
            cont,
        } => {
            let head = format!("{}!{}", render_name(subject, env), render_name(object, env));
            match cont {
                None => head,
                Some(c) => format!("{head}.{}", render(c, env, true)),
            }
        }
        Config::Input {
            subject,
            binder,
            body,
        } => {
            let subj = render_name(subject, env);
            let free = free_renderings(body, env);
            let b = binder_string(binder, &free, env);
            env.push((binder.clone(), b.clone()));
            let inner = render(body, env, true);
            env.pop();
            format!("{subj}?({b}).{inner}")
        }
        Config::Restrict { binder, body } => {
            let free = free_renderings(body, env);
            let b = binder_string(binder, &free, env);
            env.push((binder.clone(), b.clone()));
            let inner = render(body, env, true);
            env.pop();
            format!("nu {b}. {inner}")
        }
        Config::Case {
            scrutinee,
            branches,
        } => {
            let scr = render_name(scrutinee, env);
            let items: Vec<String> = branches
                .iter()
                .map(|(g, b)| format!("{}: {}", render_name(g, env), render(b, env, false)))
                .collect();
            format!("case {scr} of {{ {} }}", items.join(", "))
        }
        Config::Par(l, r) => {
            let s = format!("{} | {}", render(l, env, false), render(r, env, true));
            if parens_for_par {
                format!("({s})")
            } else {
                s
            }
        }
        Config::Inst {
            behavior,
            actor_args,
            param_args,
        } => {
            let actors: Vec<String> = actor_args.iter().map(|n| render_name(n, env)).collect();
            let values: Vec<String> = param_args.iter().map(|n| render_name(n, env)).collect();
            format!("{behavior}<{}; {}>", actors.join(","), values.join(","))
        }
        Config::Tau(body) => format!("tau.{}", render(body, env, true)),
        Config::Step { prefixes, body } => {
            let free = free_renderings(body, env);
            let mut rendered = Vec::with_capacity(prefixes.len());
            let mut pushed = 0usize;
            for pre in prefixes {
                match pre {
                    Prefix::Out { subject, object } => rendered.push(format!(
                        "{}!{}",
                        render_name(subject, env),
                        render_name(object, env)
                    )),
                    Prefix::In { subject, binder } => {
                        let subj = render_name(subject, env);
                        let b = binder_string(binder, &free, env);
                        env.push((binder.clone(), b.clone()));
                        pushed += 1;
                        rendered.push(format!("{subj}?({b})"));
                    }
                }
            }
            let inner = render(body, env, true);
            for _ in 0..pushed {
                env.pop();
            }
            format!("({}).{inner}", rendered.join(" & "))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{alpha_eq, canonicalize, parse_config, Config, Name};

    fn n(s: &str) -> Name {
        Name::src(s)
    }

    fn roundtrip(p: &Config) {
        let text = pretty_print(p);
        let back = parse_config(&text).unwrap_or_else(|e| panic!("reparse `{text}`: {e}"));
        assert!(alpha_eq(&back, p), "round trip changed `{text}`");
    }

    #[test]
    fn prints_nil() {
        assert_eq!(pretty_print(&Config::Nil), "0");
    }

    #[test]
    fn prints_par_of_prefixes() {
        let p = Config::par(
            Config::msg(n("x"), n("y")),
            Config::input(n("x"), n("z"), Config::Nil),
        );
        assert_eq!(pretty_print(&p), "x!y | x?(z).0");
    }

    #[test]
    fn roundtrips_canonical_binders() {
        let p = parse_config("nu a. a?(b).(b!a | case a of { a: 0 })").unwrap();
        roundtrip(&canonicalize(&p));
        roundtrip(&p);
    }

    #[test]
    fn renames_shadowing_binders() {
        // binder z would capture the free z of the body if kept
        let p = Config::input(n("x"), n("q"), Config::msg(n("z"), n("q")));
        let q = Config::Input {
            subject: n("x"),
            binder: n("z"),
            body: Box::new(Config::msg(n("z"), n("z"))),
        };
        // q's binder z is really bound; printing must keep the two z-roles apart
        let shadow = Config::input(n("x"), n("z"), Config::par(q.clone(), Config::msg(n("z"), n("z"))));
        roundtrip(&p);
        roundtrip(&q);
        roundtrip(&shadow);
    }

    #[test]
    fn par_in_continuation_gets_parens() {
        let p = Config::input(
            n("x"),
            n("y"),
            Config::par(Config::msg(n("a"), n("b")), Config::msg(n("c"), n("d"))),
        );
        assert_eq!(pretty_print(&p), "x?(y).(a!b | c!d)");
        roundtrip(&p);
    }
}
