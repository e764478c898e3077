//! Acceptance suite: one line per criterion, with the measured evidence.
//! Exits with a failure status when any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use num_rational::Rational64;
use tfab_core::endorigid::*;
use tfab_core::groups::{class_of_prime, in_g1, GroupElement};
use tfab_core::keq::{
    decode_keq, encode_graph, greedy_embed, is_isomorphic_finite, FiniteKeqStructure, GraphAdj,
    Point,
};
use tfab_core::primes::{class_representative, ClassKey, PrimeRegistry};
use tfab_core::reduction::*;
use tfab_core::system::*;

use common::{all_graphs, graph_canonical, support_union, ResidueSubgroup};

type Outcome = Result<String, String>;

/// A named criterion and its check.
type Criterion = (&'static str, fn() -> Outcome);

/// Exponent bound for divisibility by a key prime in the up-set law.
const DIVISIBILITY_EXPONENT: u32 = 4;

const RUNTIME_BUDGET: Duration = Duration::from_secs(300);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn stage_invariants() -> Outcome {
    let start = Instant::now();
    let mut sys = FullSystem::new();
    let rep = check_build(&mut sys, 12);
    let elapsed = start.elapsed();
    if let Some(v) = rep.failures().next() {
        return Err(format!(
            "{}: {}",
            v.clause,
            v.witness.clone().unwrap_or_default()
        ));
    }
    ensure(elapsed <= RUNTIME_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} clauses over stages 0..=12 in {:.2?}",
        rep.verdicts.len(),
        elapsed
    ))
}

fn support_condition() -> Outcome {
    let mut sys = FullSystem::new();
    let opts = SupportOptions {
        arities: vec![2, 3],
        closure: ClosureParams {
            depth: 3,
            ..ClosureParams::default()
        },
        max_classes: None,
        ..SupportOptions::default()
    };
    let (mut scenarios, mut partial, mut skipped) = (0, 0, 0);
    for l in 0..=8 {
        let st = sys.build_to_stage(l).clone();
        let rep = check_support_condition(&st, &opts);
        if let Some(v) = rep.violations.iter().chain(&rep.layer_violations).next() {
            return Err(format!(
                "stage {l}: point {} from {:?}",
                v.point, v.scenario
            ));
        }
        scenarios += rep.scenarios;
        partial += rep.partial_scenarios;
        skipped += rep.classes_skipped;
    }
    Ok(format!(
        "{scenarios} scenarios, 0 violations ({partial} bounded closures hit the cap; {skipped} classes beyond the per-arity limit)"
    ))
}

fn class_stability() -> Outcome {
    let mut sys = FullSystem::new();
    sys.build_to_stage(12);
    let mut compared = 0;
    for l in 0..=11 {
        let (a, b) = (&sys.stages()[l], &sys.stages()[l + 1]);
        for k in 1..=3 {
            let tuples = a.seq_k(k);
            if let Some((s, t)) = compare_classes(&a.tuple_classes(k), &b.tuple_classes(k), &tuples)
            {
                return Err(format!("stage {l}, k = {k}: {s:?} and {t:?}"));
            }
            compared += tuples.len();
        }
    }
    Ok(format!("{compared} tuples compared across 12 stage pairs"))
}

fn preserves_relations(a: &FiniteKeqStructure, b: &FiniteKeqStructure, phi: &[usize]) -> bool {
    (0..a.len()).all(|x| {
        (0..a.len()).all(|y| (0..2).all(|i| a.related(i, x, y) == b.related(i, phi[x], phi[y])))
    })
}

fn encoder_fidelity() -> Outcome {
    let mut graphs = 0;
    let mut reps: BTreeMap<(usize, Vec<(usize, usize)>), GraphAdj> = BTreeMap::new();
    for n in 0..=5 {
        for g in all_graphs(n) {
            graphs += 1;
            let s = encode_graph(&g);
            let back = decode_keq(&s).map_err(|e| format!("{g:?}: {e}"))?;
            ensure(
                back.isomorphism_to(&g).is_some() && back.edges.len() == g.edges.len(),
                || format!("{g:?} decodes to {back:?}"),
            )?;
            let rep = reps.entry(graph_canonical(&g)).or_insert_with(|| g.clone());
            let r = encode_graph(rep);
            let phi = is_isomorphic_finite(&s, &r)
                .ok_or_else(|| format!("{g:?} not matched to {rep:?}"))?;
            ensure(preserves_relations(&s, &r, &phi), || {
                format!("bad map for {g:?}")
            })?;
        }
    }
    let reps: Vec<&GraphAdj> = reps.values().collect();
    for (i, a) in reps.iter().enumerate() {
        for b in &reps[i + 1..] {
            ensure(
                is_isomorphic_finite(&encode_graph(a), &encode_graph(b)).is_none(),
                || format!("{a:?} and {b:?} reported isomorphic"),
            )?;
        }
    }
    Ok(format!(
        "{graphs} graphs, {} isomorphism classes",
        reps.len()
    ))
}

/// Brute-force membership in the class subgroups, one residue closure per
/// `(p, M)`.
fn oracle_member(
    st: &SystemStage,
    reg: &PrimeRegistry,
    cache: &mut HashMap<(u64, u32), Option<ResidueSubgroup>>,
    a: &GroupElement,
) -> bool {
    a.denominator_primes().into_iter().all(|p| {
        let m = a.p_exponent(p);
        let sub = cache.entry((p, m)).or_insert_with(|| {
            let (class, q) = class_of_prime(st, reg, p).unwrap()?;
            let gens: Vec<GroupElement> = class
                .iter()
                .map(|t| GroupElement::weighted(t, &q))
                .collect();
            Some(ResidueSubgroup::generate(p, m, support_union(&gens), &gens))
        });
        sub.as_ref().is_some_and(|s| s.contains_p_part(a))
    })
}

fn membership_oracle() -> Outcome {
    let mut sys = FullSystem::new();
    let st = sys.build_to_stage(10).clone();
    let mut reg = PrimeRegistry::in_memory();
    // classes whose residue subgroups stay small enough to enumerate
    let mut keyed: Vec<(u64, Vec<Point>)> = Vec::new();
    for (k, weights) in [(1, vec![vec![1]]), (2, vec![vec![1, 1], vec![1, 2]])] {
        let mut classes = st.tuple_classes(k).nontrivial_classes();
        classes.retain(|c| c.len() <= 2);
        for class in classes.iter().take(2) {
            for q in &weights {
                let key = ClassKey::ClassTuple {
                    k,
                    rep: class_representative(&st, class),
                    q: q.clone(),
                };
                let p = reg.assign_prime(&key).map_err(|e| e.to_string())?;
                let pts: BTreeSet<Point> = class.iter().flatten().copied().collect();
                keyed.push((p, pts.into_iter().collect()));
            }
        }
    }
    let outside = *st.y_set().iter().next_back().unwrap();
    let coeffs = [1i64, 2, -1, 3];
    let mut elements: Vec<GroupElement> = Vec::new();
    for (p, pts) in &keyed {
        let mut pool = pts.clone();
        if !pool.contains(&outside) {
            pool.push(outside);
        }
        for e in 1..=3u32 {
            let d = (*p as i64).pow(e);
            if (*p).pow(e * 2) > 20_000 {
                continue;
            }
            for (i, &x) in pool.iter().enumerate() {
                for &y in &pool[i..] {
                    for &cx in &coeffs {
                        for &cy in &coeffs[..2] {
                            let a = if x == y {
                                GroupElement::from_terms([(x, Rational64::new(cx, d))])
                            } else {
                                GroupElement::from_terms([
                                    (x, Rational64::new(cx, d)),
                                    (y, Rational64::new(cy, d)),
                                ])
                            };
                            if !a.is_zero() && !elements.contains(&a) {
                                elements.push(a);
                            }
                        }
                    }
                }
            }
        }
    }
    // two assigned primes at once
    let singles = elements.len();
    for i in (0..singles).step_by(7) {
        for j in (0..singles).step_by(11) {
            let s = elements[i].add(&elements[j]);
            if s.denominator_primes().len() == 2 && s.supp().len() <= 3 && !elements.contains(&s) {
                elements.push(s);
            }
        }
    }
    let mut cache = HashMap::new();
    let (mut members, mut total) = (0, 0);
    for a in &elements {
        if a.supp().len() > 3 {
            continue;
        }
        total += 1;
        let got = in_g1(&st, &reg, a).map_err(|e| format!("{a}: {e}"))?.member;
        let want = oracle_member(&st, &reg, &mut cache, a);
        ensure(got == want, || format!("{a}: solver {got}, oracle {want}"))?;
        members += usize::from(got);
    }
    ensure(total >= 500, || format!("only {total} elements"))?;
    Ok(format!(
        "{total} elements agree ({members} members) over {} primes",
        keyed.len()
    ))
}

/// Labeled graphs on at most four vertices paired with every isomorphic copy.
fn isomorphic_pairs() -> Vec<(GraphAdj, GraphAdj)> {
    let mut out = Vec::new();
    for n in 1..=4 {
        let gs = all_graphs(n);
        let canon: Vec<_> = gs.iter().map(graph_canonical).collect();
        for (i, a) in gs.iter().enumerate() {
            for (j, b) in gs.iter().enumerate() {
                if canon[i] == canon[j] {
                    out.push((a.clone(), b.clone()));
                }
            }
        }
    }
    out
}

fn forward_transfer() -> Outcome {
    const PAD: usize = 2;
    let mut sys = FullSystem::new();
    sys.build_to_stage(10);
    let pairs = isomorphic_pairs();
    let mut checked = 0;
    for (g, h) in &pairs {
        let (a, b) = (
            encode_graph(g).pad_isolated(PAD),
            encode_graph(h).pad_isolated(PAD),
        );
        let iso =
            embedding_iso(&a, &b).ok_or_else(|| format!("{g:?} -> {h:?}: no embedding iso"))?;
        for l in 0..=10 {
            let t = transfer_iso(&sys.stages()[l], &iso)
                .map_err(|e| format!("{g:?} -> {h:?} stage {l}: {e}"))?;
            let analysis = extract_pointwise_map(&t.stage, &t.point_candidate())
                .map_err(|r| format!("{g:?} -> {h:?} stage {l}: {}", r.reason))?;
            let ei = check_ei_preservation(&analysis);
            let sc = validate_scalar(&analysis);
            ensure(
                ei.report.passed()
                    && sc.passed()
                    && analysis.q_star == Some(Rational64::from_integer(1)),
                || {
                    format!(
                        "{g:?} -> {h:?} stage {l}: {:?} {:?}",
                        ei.report.failures().next(),
                        sc.failures().next()
                    )
                },
            )?;
            checked += 1;
        }
    }
    Ok(format!(
        "{} isomorphic pairs, {checked} transfers, q* = 1 throughout",
        pairs.len()
    ))
}

fn reverse_separation() -> Outcome {
    const PAD: usize = 2;
    let mut sys = FullSystem::new();
    let st = sys.build_to_stage(10).clone();
    let mut reps: BTreeMap<(usize, Vec<(usize, usize)>), GraphAdj> = BTreeMap::new();
    for n in 1..=4 {
        for g in all_graphs(n) {
            reps.entry(graph_canonical(&g)).or_insert(g);
        }
    }
    let truncations: Vec<(GraphAdj, Vec<Point>)> = reps
        .into_values()
        .map(|g| {
            let s = encode_graph(&g).pad_isolated(PAD);
            let u: BTreeSet<Point> = greedy_embed(&s, s.len()).into_iter().collect();
            let t = realized_truncation(&st, &u);
            (g, t)
        })
        .collect();
    let mut same_size = 0;
    for (i, (g, tg)) in truncations.iter().enumerate() {
        for (h, th) in &truncations[i + 1..] {
            same_size += usize::from(tg.len() == th.len());
            ensure(find_ei_bijection(tg, th).is_none(), || {
                format!("{g:?} and {h:?} admit a bijection")
            })?;
        }
    }
    // first points only: equal sizes for equal vertex counts, so the block
    // matching itself is exercised
    let firsts: Vec<(usize, Vec<Point>)> = truncations
        .iter()
        .map(|(g, t)| {
            let blocks: BTreeSet<Point> = t.iter().map(|&x| block_of(x)).collect();
            (
                g.vertices.len(),
                blocks.into_iter().map(|s| block_point(s, 0)).collect(),
            )
        })
        .collect();
    for (i, (n, fa)) in firsts.iter().enumerate() {
        for (m, fb) in &firsts[i + 1..] {
            if n == m {
                same_size += 1;
                ensure(find_ei_bijection(fa, fb).is_none(), || {
                    format!("first points of {fa:?} and {fb:?} match")
                })?;
            }
        }
        ensure(find_ei_bijection(fa, fa).is_some(), || {
            format!("{fa:?} has no identity match")
        })?;
    }
    let n = truncations.len();
    Ok(format!(
        "{} non-isomorphic pairs ({same_size} equal-size comparisons), none admit a map",
        n * (n - 1) / 2
    ))
}

fn up_set_law() -> Outcome {
    let (mut trees, mut comparisons, mut divisible) = (0, 0, 0);
    for parents in common::trees(5, 2) {
        let tree = TreeT::from_parents(&parents).map_err(|e| e.to_string())?;
        let r = build_rigid_system(&tree, 1, 3);
        let mut reg = PrimeRegistry::in_memory();
        assign_point_primes(&r, &mut reg).map_err(|e| e.to_string())?;
        let low: Vec<Point> = r.level_points(1);
        let mut keys: Vec<GroupElement> = low.iter().map(|&x| GroupElement::basis(x)).collect();
        for (i, &x) in low.iter().enumerate() {
            for &y in &low[i + 1..] {
                keys.push(GroupElement::basis(x).add(&GroupElement::basis(y)));
            }
        }
        for b in &keys {
            reg.assign_prime(&g0_key(b)).map_err(|e| e.to_string())?;
        }
        let pts = r.level_points(2);
        for b in &keys {
            let pb = reg.prime_of(&g0_key(b)).unwrap() as i64;
            let mut cands: Vec<GroupElement> = Vec::new();
            for (i, &x) in pts.iter().enumerate() {
                for &y in &pts[i..] {
                    let base = if x == y {
                        GroupElement::basis(x)
                    } else {
                        GroupElement::basis(x).add(&GroupElement::basis(y))
                    };
                    for q in [
                        Rational64::from_integer(1),
                        Rational64::from_integer(2),
                        Rational64::new(1, pb),
                    ] {
                        cands.push(base.scale(q));
                    }
                }
            }
            for up in r.up_set(b).iter().take(4) {
                cands.push(up.scale(Rational64::new(1, pb)));
                cands.push(up.add(b));
            }
            for c in &cands {
                let lhs = tree_divisible(&r, &reg, b, c, DIVISIBILITY_EXPONENT)
                    .map_err(|e| e.to_string())?;
                // the multiplier is p_b^m times a cofactor of at most 12
                let mut rhs = false;
                for m in 0..=DIVISIBILITY_EXPONENT {
                    let lifted = c.scale(Rational64::from_integer(pb.pow(m)));
                    if tree_in_g1(&r, &reg, c).map_err(|e| e.to_string())?
                        && in_up_set_closure(&r, &reg, b, &lifted, 12).map_err(|e| e.to_string())?
                    {
                        rhs = true;
                        break;
                    }
                }
                ensure(lhs == rhs, || {
                    format!("tree {parents:?}, b = {b}, c = {c}: divisible {lhs}, closure {rhs}")
                })?;
                comparisons += 1;
                divisible += usize::from(lhs);
            }
        }
        trees += 1;
    }
    Ok(format!(
        "{trees} trees, {comparisons} comparisons ({divisible} divisible), 0 violations"
    ))
}

fn endorigidity() -> Outcome {
    let ints: BTreeSet<Rational64> = (-3..=3).map(Rational64::from_integer).collect();
    let mut trees = 0;
    for parents in common::trees(4, 1) {
        let tree = TreeT::from_parents(&parents).map_err(|e| e.to_string())?;
        let r = build_rigid_system(&tree, 1, 4);
        let mut reg = PrimeRegistry::in_memory();
        let rep = endorigidity_search(&r, &mut reg, 3).map_err(|e| e.to_string())?;
        let got: BTreeSet<Rational64> = rep.survivors.iter().copied().collect();
        ensure(!rep.partial && got == ints, || {
            format!(
                "tree {parents:?}: partial {}, survivors {:?}",
                rep.partial, rep.survivors
            )
        })?;
        trees += 1;
    }
    let r = build_rigid_system(&TreeT::path(6), 1, 6);
    let branch: Vec<usize> = (0..6).collect();
    let b = analyze_branch(&r, &branch).map_err(|e| e.to_string())?;
    ensure(b.injective && b.non_scalar && b.misses_x0_multiples, || {
        format!("branch: {b:?}")
    })?;
    Ok(format!(
        "{trees} trees with integer survivors -3..=3; branch of length 6 on {} points",
        b.domain_size
    ))
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tfab"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.code() == Some(0), || {
        format!(
            "{args:?} exited with {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        )
    })?;
    Ok(out.stdout)
}

fn cli_session(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let write =
        |name: &str, text: &str| std::fs::write(dir.join(name), text).map_err(|e| e.to_string());
    write(
        "g.json",
        r#"{"vertices":["a","b","c"],"edges":[["a","b"],["b","c"]]}"#,
    )?;
    write(
        "h.json",
        r#"{"vertices":["u","v","w"],"edges":[["u","w"],["w","v"]]}"#,
    )?;
    write(
        "tree.json",
        r#"{"nodes":[0,1,2],"parent":{"1":0,"2":0},"levels":{"0":0,"1":1,"2":1},"filtration":[[],[0],[0,1,2]]}"#,
    )?;
    let sessions: [&[&str]; 8] = [
        &[
            "build",
            "--stages",
            "8",
            "--out",
            "stage.json",
            "--registry",
            "primes.log",
            "--json",
        ],
        &[
            "check",
            "--snapshot",
            "stage.json",
            "--depth",
            "2",
            "--json",
        ],
        &[
            "reduce",
            "--graph",
            "g.json",
            "--pad",
            "2",
            "--stages",
            "8",
            "--partner",
            "h.json",
            "--candidate-out",
            "cand.json",
            "--out",
            "pres.json",
            "--registry",
            "reduce.log",
            "--json",
        ],
        &[
            "analyze",
            "--candidate",
            "cand.json",
            "--stages",
            "8",
            "--json",
        ],
        &[
            "rigid",
            "build",
            "--tree",
            "tree.json",
            "--stages",
            "3",
            "--out",
            "rigid.json",
            "--json",
        ],
        &["rigid", "check", "--snapshot", "rigid.json", "--json"],
        &[
            "rigid",
            "search",
            "--tree",
            "tree.json",
            "--stages",
            "3",
            "--registry",
            "rigid.log",
            "--json",
        ],
        &["rigid", "branch", "--stages", "6", "--json"],
    ];
    let mut out = Vec::new();
    for args in sessions {
        out.push((args.join(" "), run_cli(dir, args)?));
    }
    for file in [
        "stage.json",
        "primes.log",
        "cand.json",
        "pres.json",
        "reduce.log",
        "rigid.json",
        "rigid.log",
    ] {
        let bytes = std::fs::read(dir.join(file)).map_err(|e| format!("{file}: {e}"))?;
        out.push((file.to_string(), bytes));
    }
    Ok(out)
}

fn determinism() -> Outcome {
    let (a, b) = (
        tempfile::tempdir().map_err(|e| e.to_string())?,
        tempfile::tempdir().map_err(|e| e.to_string())?,
    );
    let first = cli_session(a.path())?;
    let second = cli_session(b.path())?;
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        ensure(x == y, || format!("{name} differs between runs"))?;
        ensure(!x.is_empty(), || format!("{name} is empty"))?;
    }
    Ok(format!(
        "{} outputs byte-identical across two runs",
        first.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("stage invariants through stage 12", stage_invariants),
        ("support condition through stage 8", support_condition),
        ("class stability through stage 11", class_stability),
        (
            "encoder round trip and isomorphism fidelity",
            encoder_fidelity,
        ),
        ("G1 membership against brute force", membership_oracle),
        ("forward transfer of isomorphisms", forward_transfer),
        (
            "reverse separation of non-isomorphic cores",
            reverse_separation,
        ),
        ("up-set law, truncated", up_set_law),
        ("endorigidity and branch maps", endorigidity),
        ("CLI determinism", determinism),
    ];
    // optional criterion numbers on the command line select a subset
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {:>2} PASS {name} [{secs:.1}s]: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name} [{secs:.1}s]: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {ran} criteria pass", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
