use std::fs;

use tfab_core::keq::Point;
use tfab_core::primes::*;
use tfab_core::system::{FullSystem, Tuple};

fn key(rep: Vec<Point>, q: Vec<u64>) -> ClassKey {
    ClassKey::ClassTuple {
        k: rep.len(),
        rep,
        q,
    }
}

#[test]
fn assignment_examples() {
    let mut reg = PrimeRegistry::in_memory();
    assert_eq!(reg.lookup_prime(2), None);
    assert_eq!(reg.assign_prime(&key(vec![0, 1], vec![1, 1])).unwrap(), 2);
    assert_eq!(reg.assign_prime(&key(vec![0, 2], vec![2, 3])).unwrap(), 5);
    assert_eq!(reg.assign_prime(&key(vec![0, 1], vec![1, 1])).unwrap(), 2);
    assert_eq!(reg.lookup_prime(2), Some(&key(vec![0, 1], vec![1, 1])));
    assert_eq!(reg.lookup_prime(5), Some(&key(vec![0, 2], vec![2, 3])));
    // the element 3x - 2y avoids 2 and 3
    assert_eq!(
        reg.assign_prime(&ClassKey::g0([(4, 3), (7, -2)])).unwrap(),
        7
    );
    assert!(reg.check().is_ok());
}

#[test]
fn log_replay_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("registry.log");
    let mut reg = PrimeRegistry::open(&path).unwrap();
    let keys = [
        key(vec![3], vec![1]),
        key(vec![0, 1], vec![1, 2]),
        ClassKey::g0([(5, 1)]),
    ];
    let primes: Vec<u64> = keys.iter().map(|k| reg.assign_prime(k).unwrap()).collect();
    drop(reg);

    let replayed = PrimeRegistry::open(&path).unwrap();
    for (k, p) in keys.iter().zip(&primes) {
        assert_eq!(replayed.prime_of(k), Some(*p));
    }
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| l.contains('\t')));

    let bad = dir.path().join("bad.log");
    fs::write(
        &bad,
        format!("{text}4\t{{\"kind\":\"g0_element\",\"terms\":[[9,1]]}}\n"),
    )
    .unwrap();
    assert!(matches!(
        PrimeRegistry::open(&bad),
        Err(PrimeError::Corrupt { line: 4, .. })
    ));
    fs::write(
        &bad,
        format!("{text}2\t{{\"kind\":\"g0_element\",\"terms\":[[9,1]]}}\n"),
    )
    .unwrap();
    assert!(matches!(
        PrimeRegistry::open(&bad),
        Err(PrimeError::Corrupt { line: 4, .. })
    ));
    fs::write(&bad, "11 no tab\n").unwrap();
    assert!(matches!(
        PrimeRegistry::open(&bad),
        Err(PrimeError::Corrupt { line: 1, .. })
    ));
}

#[test]
fn replaying_the_query_log_is_deterministic() {
    let mut sys = FullSystem::new();
    let st = sys.build_to_stage(8).clone();
    let queries: Vec<ClassKey> = (1..=2)
        .flat_map(|k| {
            st.tuple_classes(k)
                .nontrivial_classes()
                .into_iter()
                .map(move |c| (k, c))
        })
        .map(|(k, c)| key(class_representative(&st, &c), vec![1; k]))
        .collect();
    let run = || {
        let mut reg = PrimeRegistry::in_memory();
        queries
            .iter()
            .map(|k| reg.assign_prime(k).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn canonical_keys_are_stable_across_stages() {
    let mut sys = FullSystem::new();
    sys.build_to_stage(10);
    let stages = sys.stages().to_vec();
    let last = stages.last().unwrap();
    for (l, st) in stages.iter().enumerate() {
        for k in 1..=2 {
            let pts: Vec<Point> = st.y_set().iter().copied().collect();
            for t in tfab_core::system::injective_tuples(&pts, k) {
                let q = vec![1; k];
                let now = canonical_class_key(st, &t, &q).unwrap();
                let later = canonical_class_key(last, &t, &q).unwrap();
                assert_eq!(now, later, "tuple {t:?} at stage {l}");
            }
        }
    }
}

#[test]
fn equivalent_tuples_share_a_key() {
    let mut sys = FullSystem::new();
    let st = sys.build_to_stage(10).clone();
    for c in st.chains() {
        let f = st.f_of(c).unwrap();
        for (&x, &y) in f.iter().take(3) {
            assert_eq!(
                canonical_class_key(&st, &[x], &[1]).unwrap(),
                canonical_class_key(&st, &[y], &[1]).unwrap()
            );
        }
    }
    let untouched: Tuple = vec![*st.y_set().iter().next().unwrap()];
    let class = st.tuple_classes(1).class_of(&untouched);
    if class.len() == 1 {
        assert_eq!(
            canonical_class_key(&st, &untouched, &[1]).unwrap(),
            key(untouched.clone(), vec![1])
        );
    }
    assert!(matches!(
        canonical_class_key(&st, &[0, 0], &[1, 1]),
        Err(PrimeError::NotInjective(_))
    ));
    assert!(matches!(
        canonical_class_key(&st, &[0], &[0]),
        Err(PrimeError::BadWeights)
    ));
    assert!(matches!(
        canonical_class_key(&st, &[u64::MAX], &[1]),
        Err(PrimeError::NotRealized(_))
    ));
}
