//! Patient-exclusive, class-stratified train/val/test assignment.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{Manifest, Split};
use crate::error::{Error, Result};

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.5, 0.25, 0.25];

const TIE: f64 = 1e-12;

struct Patient<'a> {
    id: &'a str,
    /// Images per class index.
    counts: Vec<usize>,
    total: usize,
}

/// Running image counts per `(split, class)`.
struct Tally {
    by_class: [Vec<usize>; 3],
    totals: [usize; 3],
}

impl Tally {
    /// Σ over splits and classes of |share of the class in the split − target|,
    /// plus the same deviation for overall image counts. Classes not yet
    /// seen contribute nothing.
    fn cost(&self, fractions: &[f64; 3]) -> f64 {
        let k = self.by_class[0].len();
        let mut cost = 0.0;
        for c in 0..k {
            let class_total: usize = (0..3).map(|s| self.by_class[s][c]).sum();
            if class_total > 0 {
                for s in 0..3 {
                    cost += (self.by_class[s][c] as f64 / class_total as f64 - fractions[s]).abs();
                }
            }
        }
        let all: usize = self.totals.iter().sum();
        if all > 0 {
            for s in 0..3 {
                cost += (self.totals[s] as f64 / all as f64 - fractions[s]).abs();
            }
        }
        cost
    }

    fn add(&mut self, s: usize, p: &Patient, sign: isize) {
        for (c, &n) in p.counts.iter().enumerate() {
            self.by_class[s][c] = (self.by_class[s][c] as isize + sign * n as isize) as usize;
        }
        self.totals[s] = (self.totals[s] as isize + sign * p.total as isize) as usize;
    }
}

/// Assigns every patient, with all of their images, to one of train, val
/// and test. Patients are visited largest first (seeded order among equal
/// sizes) and each goes to the split that leaves the per-class and overall
/// image shares closest to `fractions`; exact ties are broken by the seed.
pub fn split_patients(manifest: &Manifest, fractions: [f64; 3], seed: u64) -> Result<Manifest> {
    if fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let k = manifest.classes.len();
    let mut by_id: BTreeMap<&str, Patient> = BTreeMap::new();
    for r in &manifest.records {
        let c = manifest.class_index(&r.label)?;
        let p = by_id.entry(&r.patient_id).or_insert_with(|| Patient {
            id: &r.patient_id,
            counts: vec![0; k],
            total: 0,
        });
        p.counts[c] += 1;
        p.total += 1;
    }
    let needed = fractions.iter().filter(|&&f| f > 0.0).count();
    if by_id.len() < needed {
        return Err(Error::validation(format!(
            "{} patients cannot fill {needed} splits",
            by_id.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut patients: Vec<Patient> = by_id.into_values().collect();
    patients.shuffle(&mut rng);
    patients.sort_by(|a, b| b.total.cmp(&a.total));

    let mut tally = Tally {
        by_class: [vec![0; k], vec![0; k], vec![0; k]],
        totals: [0; 3],
    };
    let mut assigned: BTreeMap<&str, Split> = BTreeMap::new();
    for p in &patients {
        let mut best: Vec<usize> = Vec::new();
        let mut best_cost = f64::INFINITY;
        for s in (0..3).filter(|&s| fractions[s] > 0.0) {
            tally.add(s, p, 1);
            let cost = tally.cost(&fractions);
            tally.add(s, p, -1);
            if cost < best_cost - TIE {
                best_cost = cost;
                best.clear();
                best.push(s);
            } else if (cost - best_cost).abs() <= TIE {
                best.push(s);
            }
        }
        let s = best[rng.random_range(0..best.len())];
        tally.add(s, p, 1);
        assigned.insert(p.id, Split::ASSIGNED[s]);
    }

    let mut out = manifest.clone();
    for r in &mut out.records {
        r.split = assigned[r.patient_id.as_str()];
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::Record;
    use std::collections::BTreeSet;
    use std::path::PathBuf;

    fn manifest(patients: &[(&str, &[&str])]) -> Manifest {
        let records = patients
            .iter()
            .flat_map(|(id, labels)| {
                labels.iter().enumerate().map(move |(i, l)| Record {
                    path: format!("{id}_{i}.pgm"),
                    label: l.to_string(),
                    patient_id: id.to_string(),
                    split: Split::Unassigned,
                })
            })
            .collect();
        Manifest::new(Manifest::default_classes(), records, PathBuf::new()).unwrap()
    }

    fn patients_in(m: &Manifest, s: Split) -> BTreeSet<&str> {
        m.split(s).map(|r| r.patient_id.as_str()).collect()
    }

    #[test]
    fn four_equal_patients_split_two_one_one() {
        for seed in 0..20 {
            let m = manifest(&[("a", &["Aorta"; 2]), ("b", &["Aorta"; 2]), ("c", &["Aorta"; 2]), ("d", &["Aorta"; 2])]);
            let out = split_patients(&m, DEFAULT_FRACTIONS, seed).unwrap();
            let sizes: Vec<usize> = Split::ASSIGNED.iter().map(|&s| patients_in(&out, s).len()).collect();
            assert_eq!(sizes, [2, 1, 1], "seed {seed}");
        }
    }

    #[test]
    fn single_patient_is_rejected() {
        let m = manifest(&[("only", &["Aorta", "Flows", "Other"])]);
        assert!(split_patients(&m, DEFAULT_FRACTIONS, 0).is_err());
    }

    #[test]
    fn one_image_patients_hit_counts_within_two() {
        for n in [7usize, 20, 41, 100] {
            let labels = ["Aorta", "Flows", "Other", "VSign", "XSign"];
            let ids: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
            let pats: Vec<(&str, &[&str])> = ids
                .iter()
                .enumerate()
                .map(|(i, id)| (id.as_str(), std::slice::from_ref(&labels[i % 5])))
                .collect();
            let out = split_patients(&manifest(&pats), DEFAULT_FRACTIONS, n as u64).unwrap();
            for (s, f) in Split::ASSIGNED.iter().zip(DEFAULT_FRACTIONS) {
                let got = out.split(*s).count() as f64;
                assert!((got - f * n as f64).abs() <= 2.0, "n {n} split {s}: {got}");
            }
        }
    }

    #[test]
    fn same_seed_same_split() {
        let m = manifest(&[("a", &["Aorta"]), ("b", &["Flows"]), ("c", &["Other"]), ("d", &["XSign"]), ("e", &["VSign"])]);
        assert_eq!(split_patients(&m, DEFAULT_FRACTIONS, 9).unwrap(), split_patients(&m, DEFAULT_FRACTIONS, 9).unwrap());
    }
}
