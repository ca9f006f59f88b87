use apitc::lts::*;
use apitc::syntax::*;
use std::collections::BTreeSet;
fn main() {
    let p = parse_config("x!y | u?(v).0").unwrap();
    let ts = step_transitions(&p, &Behaviors::new(), &BTreeSet::new()).unwrap();
    for (l, t) in &ts { println!("{l}  ->  {}", pretty_print(t)); }
    println!("---");
    let p = parse_config("x!y | x?(v).0").unwrap();
    let ts = step_transitions(&p, &Behaviors::new(), &BTreeSet::new()).unwrap();
    for (l, t) in &ts { println!("{l}  ->  {}", pretty_print(t)); }
}
