//! Acceptance gate: ten property- and oracle-based criteria, one test per
//! criterion, each printing a single pass line (run with --nocapture to see
//! them). A failed assertion marks the criterion failed.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use semsam::decode::{
    decode_step, rescore_and_select, softmax_probs, DecodeRequest, FilterSpec, KeepSpec,
    SelectMode,
};
use semsam::embedding::TokenizerMeta;
use semsam::eval::{
    aggregate, beta_quantile, credible_interval, stub_respond, ScoringConfig,
};
use semsam::neighbors::{build_neighbor_table, NeighborBuildConfig};
use semsam::qa::{
    generate, rederive_answer_key, serialize_jsonl, AblationKind, GenConfig, MediaKind,
    QuestionType, Tag, TargetType, Templates, TextRefMode, VisualPromptKind,
};
use semsam::relations::{
    anatomical_relation, annotate_structures, colloquial_relation, FrameMapping, ImageAxis,
    PatientAxis,
};
use semsam::volume::{
    in_plane_flips, resample_mpr, trilinear_sample, LabelMap, OrientationMode, SliceDirection,
    Volume, IDENTITY_AFFINE,
};
use semsam::{EmbeddingMatrix, NeighborTable, VocabPartition};

fn pass(n: u32, what: &str) {
    println!("acceptance criterion {n} ({what}): PASS");
}

fn partition(v_tok: u32, v_emb: u32, special: &[u32]) -> VocabPartition {
    let meta = TokenizerMeta {
        v_tok,
        special_ids: special.iter().copied().collect::<BTreeSet<_>>(),
        added_ids: BTreeSet::new(),
    };
    VocabPartition::build(&meta, v_emb).unwrap()
}

fn random_embeddings(rng: &mut Xoshiro256StarStar, n: usize, d: usize) -> EmbeddingMatrix {
    let data: Vec<f32> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    EmbeddingMatrix::new(n, d, data).unwrap()
}

/// 1. With keep = {self only}, semantic argmax equals plain filtered greedy.
#[test]
fn c1_reduction_to_filtered_greedy() {
    let v = 512usize;
    let mut rng = Xoshiro256StarStar::seed_from_u64(101);
    let p = partition(v as u32, v as u32, &[]);
    let e = random_embeddings(&mut rng, v, 12);
    let table = build_neighbor_table(&e, &p, &NeighborBuildConfig { k: 8, ..Default::default() })
        .unwrap();

    for case in 0..1000u64 {
        let mut lrng = Xoshiro256StarStar::seed_from_u64(10_000 + case);
        let logits: Vec<f32> = (0..v).map(|_| lrng.gen_range(-6.0..6.0)).collect();
        let filter = if case % 2 == 0 {
            FilterSpec::TopM { m: 40 }
        } else {
            FilterSpec::TopP { p: 0.92 }
        };
        let req = DecodeRequest {
            logits: logits.clone(),
            temperature: 0.8,
            filter,
            keep: KeepSpec::KPrime { k_prime: 1 },
            select: SelectMode::Argmax,
            seed: None,
            tau_score: 1.0,
        };
        let out = decode_step(&req, &table, &p).unwrap();
        assert!(!out.deferred);
        // self weight 1 means Score = p, so the winner is the plain greedy
        // token; argmax of p is argmax of logits
        let mut best = 0usize;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        assert_eq!(out.token, best as u32, "case {case}");
    }
    pass(1, "self-only keep reduces to filtered greedy, 1000/1000");
}

/// 2. Blocked KNN equals quadratic brute force.
#[test]
fn c2_knn_matches_brute_force() {
    let (n, d, k) = (256usize, 16usize, 8usize);
    let p = partition(n as u32, n as u32, &[]);
    for seed in 0..20u64 {
        let mut rng = Xoshiro256StarStar::seed_from_u64(200 + seed);
        let e = random_embeddings(&mut rng, n, d);
        let table =
            build_neighbor_table(&e, &p, &NeighborBuildConfig { k, ..Default::default() }).unwrap();

        // brute force in f64
        let mut normed = vec![0f64; n * d];
        for i in 0..n {
            let row = e.row(i);
            let norm = row.iter().map(|v| *v as f64 * *v as f64).sum::<f64>().sqrt() + 1e-8;
            for (j, &x) in row.iter().enumerate() {
                normed[i * d + j] = x as f64 / norm;
            }
        }
        for i in 0..n {
            let mut sims: Vec<(u32, f64)> = (0..n)
                .map(|j| {
                    let s: f64 = (0..d)
                        .map(|a| normed[i * d + a] * normed[j * d + a])
                        .sum();
                    (j as u32, s)
                })
                .collect();
            sims.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            // self first, then best of the rest
            let mut expect: Vec<(u32, f64)> = vec![(i as u32, sims.iter().find(|s| s.0 == i as u32).unwrap().1)];
            expect.extend(sims.iter().filter(|s| s.0 != i as u32).take(k - 1));
            let ids = table.row_ids(i);
            let vals = table.row_vals(i);
            for slot in 0..k {
                assert_eq!(ids[slot], expect[slot].0, "seed {seed} row {i} slot {slot}");
                assert!(
                    (vals[slot] as f64 - expect[slot].1).abs() < 1e-5,
                    "seed {seed} row {i} slot {slot}: {} vs {}",
                    vals[slot],
                    expect[slot].1
                );
            }
        }
    }
    pass(2, "exact KNN equals brute force over 20 seeds");
}

/// 3. Score_t(c) >= p_t(c) for every candidate, always.
#[test]
fn c3_score_lower_bound() {
    let (n, d) = (64usize, 8usize);
    let p = partition(n as u32, n as u32, &[]);
    let mut checked = 0u64;
    for t_seed in 0..50u64 {
        let mut rng = Xoshiro256StarStar::seed_from_u64(300 + t_seed);
        let e = random_embeddings(&mut rng, n, d);
        let table =
            build_neighbor_table(&e, &p, &NeighborBuildConfig { k: 8, ..Default::default() })
                .unwrap();
        for case in 0..200u64 {
            let mut lrng = Xoshiro256StarStar::seed_from_u64(7_000 + t_seed * 1000 + case);
            let logits: Vec<f32> = (0..n).map(|_| lrng.gen_range(-5.0..5.0)).collect();
            let req = DecodeRequest {
                logits,
                temperature: 1.0,
                filter: FilterSpec::TopM { m: 16 },
                keep: if case % 2 == 0 {
                    KeepSpec::KPrime { k_prime: 5 }
                } else {
                    KeepSpec::Threshold { t: 0.2 }
                },
                select: SelectMode::Argmax,
                seed: None,
                tau_score: 1.0,
            };
            let out = decode_step(&req, &table, &p).unwrap();
            for c in &out.candidates {
                assert!(
                    c.score >= c.p as f64 - 1e-12,
                    "score {} < p {} for token {}",
                    c.score,
                    c.p,
                    c.token
                );
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 10_000);
    pass(3, "Score >= p on 10,000 instances, zero violations");
}

/// 4. A non-content candidate forces deferral, and the fallback matches an
/// independent seeded sampler.
#[test]
fn c4_deferral_matches_reference_sampler() {
    let v = 32usize;
    let specials = [1u32, 7];
    let p = partition(v as u32, v as u32, &specials);
    let mut erng = Xoshiro256StarStar::seed_from_u64(41);
    let e = random_embeddings(&mut erng, v, 6);
    let table =
        build_neighbor_table(&e, &p, &NeighborBuildConfig { k: 4, ..Default::default() }).unwrap();

    for case in 0..500u64 {
        let mut lrng = Xoshiro256StarStar::seed_from_u64(40_000 + case);
        let mut logits: Vec<f32> = (0..v).map(|_| lrng.gen_range(-3.0..3.0)).collect();
        // push a special token into the top-8 candidate set
        logits[1] += 8.0;
        let seed = 90_000 + case;
        let req = DecodeRequest {
            logits: logits.clone(),
            temperature: 1.0,
            filter: FilterSpec::TopM { m: 8 },
            keep: KeepSpec::KPrime { k_prime: 2 },
            select: SelectMode::Sample,
            seed: Some(seed),
            tau_score: 1.0,
        };
        let out = decode_step(&req, &table, &p).unwrap();
        assert!(out.deferred, "case {case} did not defer");

        // reference: candidates by (p desc, id asc), one Xoshiro f64 draw,
        // cumulative walk over renormalized filtered mass
        let probs = softmax_probs(&logits, 1.0).unwrap();
        let mut ids: Vec<u32> = (0..v as u32).collect();
        ids.sort_by(|&a, &b| {
            probs[b as usize]
                .partial_cmp(&probs[a as usize])
                .unwrap()
                .then(a.cmp(&b))
        });
        ids.truncate(8);
        let weights: Vec<f64> = ids.iter().map(|&c| probs[c as usize] as f64).collect();
        let total: f64 = weights.iter().sum();
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let target = rng.gen::<f64>() * total;
        let mut cum = 0f64;
        let mut want = *ids.last().unwrap();
        for (&id, &w) in ids.iter().zip(&weights) {
            cum += w;
            if cum > target {
                want = id;
                break;
            }
        }
        assert_eq!(out.token, want, "case {case}");
    }
    pass(4, "deferral + reference sampler agreement, 500/500");
}

/// 5. Hot-path latency and the lookup complexity bound at full vocabulary
/// scale.
#[test]
fn c5_hot_path_budget() {
    let v_emb = 151_936u32;
    let v_tok = 151_643u32;
    let p = partition(v_tok, v_emb, &[]);
    let n = p.content_ids.len();
    let k = 32usize;

    // synthetic table: decode never inspects how neighbors were found
    let mut s_tid = vec![0u32; n * k];
    let mut s_val = vec![0f32; n * k];
    let mut state = 0x9e3779b97f4a7c15u64;
    for (row, id) in p.content_ids.iter().enumerate() {
        s_tid[row * k] = *id;
        s_val[row * k] = 1.0;
        for slot in 1..k {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            s_tid[row * k + slot] = (state % v_tok as u64) as u32;
            s_val[row * k + slot] = 0.9 - slot as f32 * 0.01;
        }
    }
    let table = NeighborTable {
        content_ids: p.content_ids.clone(),
        k,
        s_tid,
        s_val,
    };

    let mut rng = Xoshiro256StarStar::seed_from_u64(55);
    let logits: Vec<f32> = (0..v_emb).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let req = DecodeRequest {
        logits: logits.clone(),
        temperature: 1.0,
        filter: FilterSpec::TopM { m: 50 },
        keep: KeepSpec::KPrime { k_prime: 32 },
        select: SelectMode::Argmax,
        seed: None,
        tau_score: 1.0,
    };

    let probs = softmax_probs(&logits, 1.0).unwrap();
    let reps = 21;
    let mut excl = Vec::with_capacity(reps);
    let mut incl = Vec::with_capacity(reps);
    let mut lookups = 0u64;
    for _ in 0..reps {
        let t0 = Instant::now();
        let out = rescore_and_select(&probs, &req, &table, &p).unwrap();
        excl.push(t0.elapsed());
        lookups = out.lookups;

        let t1 = Instant::now();
        let _ = decode_step(&req, &table, &p).unwrap();
        incl.push(t1.elapsed());
    }
    excl.sort();
    incl.sort();
    let med_excl = excl[reps / 2];
    let med_incl = incl[reps / 2];
    assert!(lookups <= 50 * 32, "lookups {lookups} over bound");
    assert!(
        med_excl.as_secs_f64() < 0.005,
        "median excluding softmax {med_excl:?} >= 5 ms"
    );
    assert!(
        med_incl.as_secs_f64() < 0.020,
        "median including softmax {med_incl:?} >= 20 ms"
    );
    pass(
        5,
        "hot path within budget (medians under 5 ms / 20 ms, lookups bounded)",
    );
}

/// 6. Trilinear interpolation: exact at grid points, oracle-matched between
/// them.
#[test]
fn c6_trilinear_exactness() {
    let dims = [64usize, 64, 64];
    let mut rng = Xoshiro256StarStar::seed_from_u64(66);
    let voxels: Vec<f32> = (0..dims[0] * dims[1] * dims[2])
        .map(|_| rng.gen_range(-1.0f32..1.0)) // unit scale keeps f32 ulp well under the tolerance
        .collect();
    let v = Volume::new(dims, IDENTITY_AFFINE, voxels).unwrap();

    let resampled = resample_mpr(&v, SliceDirection::Axial, [1.0, 1.0, 1.0]).unwrap();
    assert_eq!(resampled.dims, v.dims);
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                assert_eq!(resampled.at(i, j, k), v.at(i, j, k), "grid point ({i},{j},{k})");
            }
        }
    }

    // 8-corner oracle at arbitrary points
    for case in 0..10_000 {
        let x: f64 = rng.gen_range(0.0..63.0);
        let y: f64 = rng.gen_range(0.0..63.0);
        let z: f64 = rng.gen_range(0.0..63.0);
        let (i0, j0, k0) = (x.floor() as usize, y.floor() as usize, z.floor() as usize);
        let (fx, fy, fz) = (x - i0 as f64, y - j0 as f64, z - k0 as f64);
        let mut want = 0f64;
        for dz in 0..2usize {
            for dy in 0..2usize {
                for dx in 0..2usize {
                    let w = (if dx == 0 { 1.0 - fx } else { fx })
                        * (if dy == 0 { 1.0 - fy } else { fy })
                        * (if dz == 0 { 1.0 - fz } else { fz });
                    want += w * v.at(i0 + dx, j0 + dy, k0 + dz) as f64;
                }
            }
        }
        let got = trilinear_sample(&v, x, y, z) as f64;
        assert!((got - want).abs() < 1e-5, "case {case}: {got} vs {want}");
    }
    pass(6, "trilinear exact at nodes, oracle-matched at 10,000 points");
}

/// 7. Relation oracle vs exhaustive recomputation, all view configurations.
#[test]
fn c7_relation_oracle() {
    let dims = [32usize, 32, 32];
    let mut rng = Xoshiro256StarStar::seed_from_u64(77);
    for case in 0..200 {
        let mut labels = vec![0u32; dims[0] * dims[1] * dims[2]];
        let mut place = |rng: &mut Xoshiro256StarStar, label: u32| {
            let lo = [
                rng.gen_range(0..26usize),
                rng.gen_range(0..26usize),
                rng.gen_range(0..26usize),
            ];
            let sz = [
                rng.gen_range(2..6usize),
                rng.gen_range(2..6usize),
                rng.gen_range(2..6usize),
            ];
            for k in lo[2]..(lo[2] + sz[2]).min(31) {
                for j in lo[1]..(lo[1] + sz[1]).min(31) {
                    for i in lo[0]..(lo[0] + sz[0]).min(31) {
                        labels[i + dims[0] * (j + dims[1] * k)] = label;
                    }
                }
            }
        };
        place(&mut rng, 1);
        place(&mut rng, 2);
        let lm = LabelMap {
            dims,
            affine: IDENTITY_AFFINE,
            labels: labels.clone(),
            names: BTreeMap::new(),
        };
        let anns = annotate_structures(&lm);
        if anns.len() != 2 {
            continue; // the second box fully overwrote the first
        }
        let (a, b) = (&anns[0], &anns[1]);

        // exhaustive voxel-scan centroids
        let mut scan = [[0f64; 3]; 2];
        let mut count = [0u64; 2];
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let l = labels[i + dims[0] * (j + dims[1] * k)];
                    if l == 0 {
                        continue;
                    }
                    let s = (l - 1) as usize;
                    scan[s][0] += i as f64;
                    scan[s][1] += j as f64;
                    scan[s][2] += k as f64;
                    count[s] += 1;
                }
            }
        }
        for s in 0..2 {
            for ax in 0..3 {
                scan[s][ax] /= count[s] as f64;
            }
        }
        let margin = 3.0;

        for axis in PatientAxis::ALL {
            let d = scan[0][axis.index()] - scan[1][axis.index()];
            let want = if d.abs() < margin {
                None
            } else {
                // +R right, +A anterior, +S superior; negated for d < 0
                Some(match (axis, d > 0.0) {
                    (PatientAxis::Right, true) => "right",
                    (PatientAxis::Right, false) => "left",
                    (PatientAxis::Anterior, true) => "anterior",
                    (PatientAxis::Anterior, false) => "posterior",
                    (PatientAxis::Superior, true) => "superior",
                    (PatientAxis::Superior, false) => "inferior",
                })
            };
            let got = anatomical_relation(a, b, axis, margin).map(|t| t.key());
            assert_eq!(got, want, "case {case} axis {axis:?}");
            // antisymmetry
            let rev = anatomical_relation(b, a, axis, margin).map(|t| t.key());
            match (got, rev) {
                (None, None) => {}
                (Some(x), Some(y)) => {
                    assert_eq!(
                        anatomical_relation(a, b, axis, margin).unwrap().opposite().key(),
                        y,
                        "antisymmetry {x} vs {y}"
                    );
                }
                _ => panic!("one-sided relation, case {case}"),
            }
        }

        // colloquial terms across every (direction, mode) and image axis,
        // against an independently computed image-frame coordinate
        for dir in SliceDirection::ALL {
            for mode in OrientationMode::ALL {
                let fm = FrameMapping::for_view(dir, mode);
                let flips = in_plane_flips(mode, dir);
                let [ux, uy] = dir.plane_axes();
                let s_axis = dir.slice_axis();
                let coords = |c: [f64; 3]| {
                    let x = if flips[0] { (dims[ux] as f64 - 1.0) - c[ux] } else { c[ux] };
                    let y = if flips[1] { (dims[uy] as f64 - 1.0) - c[uy] } else { c[uy] };
                    [x, y, c[s_axis]]
                };
                let ca = coords(scan[0]);
                let cb = coords(scan[1]);
                for axis in ImageAxis::ALL {
                    let d = ca[axis.index()] - cb[axis.index()];
                    let want = if d.abs() < margin {
                        None
                    } else {
                        Some(match (axis, d < 0.0) {
                            (ImageAxis::X, true) => "left-of",
                            (ImageAxis::X, false) => "right-of",
                            (ImageAxis::Y, true) => "above",
                            (ImageAxis::Y, false) => "below",
                            (ImageAxis::Slice, true) => "in-front-of",
                            (ImageAxis::Slice, false) => "behind",
                        })
                    };
                    let got = colloquial_relation(a, b, &fm, axis, margin).map(|t| t.key());
                    assert_eq!(got, want, "case {case} {dir:?} {mode:?} {axis:?}");
                }
            }
        }
    }
    pass(7, "relation oracle matches exhaustive recomputation, all configs");
}

/// A 24^3 scan with ten named box structures.
fn ten_structure_scan() -> (Volume, LabelMap) {
    let dims = [24usize, 24, 24];
    let n = dims[0] * dims[1] * dims[2];
    let voxels: Vec<f32> = (0..n).map(|i| ((i * 37) % 211) as f32).collect();
    let volume = Volume::new(dims, IDENTITY_AFFINE, voxels).unwrap();
    let mut labels = vec![0u32; n];
    let mut names = BTreeMap::new();
    // well-separated 3-cube boxes on a coarse lattice
    let cells = [
        ([1, 1, 1], "liver"),
        ([9, 1, 1], "spleen"),
        ([17, 1, 9], "left kidney"),
        ([1, 9, 1], "right kidney"),
        ([9, 9, 9], "stomach"),
        ([17, 9, 17], "pancreas"),
        ([1, 17, 9], "aorta"),
        ([9, 17, 17], "gallbladder"),
        ([17, 17, 1], "heart"),
        ([1, 1, 17], "bladder"),
    ];
    for (idx, (lo, name)) in cells.iter().enumerate() {
        let label = idx as u32 + 1;
        names.insert(label, name.to_string());
        for k in lo[2]..lo[2] + 3 {
            for j in lo[1]..lo[1] + 3 {
                for i in lo[0]..lo[0] + 3 {
                    labels[i + dims[0] * (j + dims[1] * k)] = label;
                }
            }
        }
    }
    (
        volume,
        LabelMap {
            dims,
            affine: IDENTITY_AFFINE,
            labels,
            names,
        },
    )
}

fn e2e_config() -> GenConfig {
    GenConfig {
        media: vec![MediaKind::Volume3d, MediaKind::Slice2d],
        slice_directions: vec![SliceDirection::Axial],
        orientation_modes: vec![OrientationMode::StandardView],
        visual_prompt_kinds: vec![VisualPromptKind::None, VisualPromptKind::Bbox],
        text_ref_modes: vec![TextRefMode::Name, TextRefMode::Letter],
        pairs_per_cell: 1,
        seed: 88,
        ..Default::default()
    }
}

/// 8. Generator determinism and soundness on a 10-structure scan.
#[test]
fn c8_generator_determinism_and_soundness() {
    let (v, lm) = ten_structure_scan();
    let cfg = e2e_config();
    let t = Templates::builtin();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let o1 = generate(&v, &lm, &cfg, &t, Some(d1.path())).unwrap();
    let o2 = generate(&v, &lm, &cfg, &t, Some(d2.path())).unwrap();

    let j1 = serialize_jsonl(&o1.items);
    assert_eq!(j1, serialize_jsonl(&o2.items), "questions.jsonl differs");
    for files in o1.media_manifest.values() {
        for f in files {
            let b1 = std::fs::read(d1.path().join(f)).unwrap();
            let b2 = std::fs::read(d2.path().join(f)).unwrap();
            assert_eq!(b1, b2, "media file {f} differs");
        }
    }

    // negated key pairing for relation closed questions
    let mut n_pairs = 0;
    for item in o1.items.iter().filter(|i| {
        i.target_type.is_relation()
            && i.question_type == QuestionType::ClosedTrue
            && i.params.ablation.is_none()
    }) {
        let twin = o1
            .items
            .iter()
            .find(|o| {
                o.question_type == QuestionType::ClosedInverted
                    && o.params.ablation.is_none()
                    && o.target_type == item.target_type
                    && o.params == semsam::qa::ParamRecord {
                        asserted_term: o.params.asserted_term.clone(),
                        ..item.params.clone()
                    }
            })
            .unwrap_or_else(|| panic!("no inverted twin for {}", item.id));
        assert_eq!(item.answer_key, "True");
        assert_eq!(twin.answer_key, "False");
        assert_ne!(item.params.asserted_term, twin.params.asserted_term);
        n_pairs += 1;
    }
    assert!(n_pairs > 0);

    // every answer key re-derives independently
    for item in &o1.items {
        assert_eq!(
            rederive_answer_key(&lm, item).as_deref(),
            Some(item.answer_key.as_str()),
            "key mismatch on {}",
            item.id
        );
    }
    pass(8, "byte-identical reruns, negation pairing, keys re-derive");
}

fn closed_item(key: &str) -> semsam::qa::QAItem {
    use semsam::qa::{ParamRecord, QAItem};
    QAItem {
        id: "q00000".into(),
        media_ref: None,
        question: "test?".into(),
        question_type: QuestionType::ClosedTrue,
        target_type: TargetType::RelationColloquial,
        answer_key: key.into(),
        category_tags: vec![Tag::RQ2],
        params: ParamRecord {
            media: MediaKind::Slice2d,
            slice_direction: SliceDirection::Axial,
            orientation_mode: OrientationMode::StandardView,
            visual_prompt_kind: VisualPromptKind::None,
            text_ref_mode: TextRefMode::Name,
            structure_a: None,
            structure_b: None,
            relation_axis: None,
            asserted_term: None,
            margin: 3.0,
            slice_index: None,
            ablation: None,
        },
        prompt_records: Vec::new(),
        distractors: Vec::new(),
    }
}

/// 9. Evaluator calibration: binomial band, interval coverage, exact
/// posterior arithmetic.
#[test]
fn c9_evaluator_calibration() {
    // stub accuracy at error_rate 0.2 over 2,000 items
    let items: Vec<_> = (0..2000)
        .map(|i| {
            let mut it = closed_item(if i % 2 == 0 { "True" } else { "False" });
            it.id = format!("q{i:05}");
            it.distractors = vec![if i % 2 == 0 { "False".into() } else { "True".into() }];
            it
        })
        .collect();
    let responses = stub_respond(&items, 0.2, 9090);
    let rep = aggregate(&items, &responses, &ScoringConfig::default(), (1.0, 1.0), 0.95);
    let acc = rep.overall.accuracy.unwrap();
    let half_band = 1.96 * (0.8f64 * 0.2 / 2000.0).sqrt();
    assert!(
        (acc - 0.8).abs() <= half_band,
        "accuracy {acc} outside 0.8 +/- {half_band}"
    );

    // empirical coverage of the 95% interval over 200 binomial simulations
    let mut rng = Xoshiro256StarStar::seed_from_u64(990);
    let p0 = 0.7f64;
    let n = 100u64;
    let mut covered = 0u32;
    for _ in 0..200 {
        let s = (0..n).filter(|_| rng.gen::<f64>() < p0).count() as u64;
        let (lo, hi) = credible_interval(s, n - s, (1.0, 1.0), 0.95);
        if lo <= p0 && p0 <= hi {
            covered += 1;
        }
    }
    let coverage = covered as f64 / 200.0;
    assert!(
        (coverage - 0.95).abs() <= 0.03,
        "coverage {coverage} outside 95% +/- 3%"
    );

    // Beta(8,4): exact mean, endpoints against the numeric quantile oracle
    let mean = 8.0 / 12.0;
    assert_eq!(mean, 2.0 / 3.0);
    let (lo, hi) = credible_interval(7, 3, (1.0, 1.0), 0.95);
    let want_lo = quadrature_quantile(8.0, 4.0, 0.025);
    let want_hi = quadrature_quantile(8.0, 4.0, 0.975);
    assert!((lo - want_lo).abs() < 1e-6, "{lo} vs {want_lo}");
    assert!((hi - want_hi).abs() < 1e-6, "{hi} vs {want_hi}");
    assert!((beta_quantile(8.0, 4.0, 0.5) - quadrature_quantile(8.0, 4.0, 0.5)).abs() < 1e-6);
    pass(9, "calibration: band, 95% coverage, exact Beta arithmetic");
}

/// Simpson-quadrature CDF inversion, independent of the evaluator's
/// incomplete-beta implementation.
fn quadrature_quantile(a: f64, b: f64, q: f64) -> f64 {
    fn ln_gamma(x: f64) -> f64 {
        // Stirling series with shift, enough for small integer-ish args
        let mut x = x;
        let mut acc = 0.0;
        while x < 10.0 {
            acc -= x.ln();
            x += 1.0;
        }
        acc + 0.5 * ((2.0 * std::f64::consts::PI).ln() - x.ln())
            + x * (x.ln() - 1.0)
            + 1.0 / (12.0 * x)
            - 1.0 / (360.0 * x.powi(3))
    }
    let ln_norm = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
    let pdf = |x: f64| {
        if x <= 0.0 || x >= 1.0 {
            0.0
        } else {
            (ln_norm + (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln()).exp()
        }
    };
    let cdf = |x: f64| {
        let n = 4000;
        let h = x / n as f64;
        let mut s = 0.0;
        for i in 0..n {
            let x0 = i as f64 * h;
            s += h / 6.0 * (pdf(x0) + 4.0 * pdf(x0 + h / 2.0) + pdf(x0 + h));
        }
        s
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// 10. End-to-end dry run: generate, stub-answer perfectly, evaluate.
#[test]
fn c10_end_to_end_dry_run() {
    let start = Instant::now();
    let (v, lm) = ten_structure_scan();
    let cfg = e2e_config();
    let dir = tempfile::tempdir().unwrap();
    let out = generate(&v, &lm, &cfg, &Templates::builtin(), Some(dir.path())).unwrap();
    assert!(!out.items.is_empty());

    let responses = stub_respond(&out.items, 0.0, 1);
    let rep = aggregate(&out.items, &responses, &ScoringConfig::default(), (1.0, 1.0), 0.95);
    assert_eq!(rep.overall.n_omitted, 0);
    assert_eq!(rep.overall.accuracy, Some(1.0));
    for tag in [Tag::RQ1, Tag::RQ2, Tag::RQ3, Tag::AB1, Tag::AB2] {
        let stats = rep
            .per_category
            .get(&tag.to_string())
            .unwrap_or_else(|| panic!("no items tagged {tag}"));
        assert_eq!(stats.accuracy, Some(1.0), "{tag}");
        assert_eq!(stats.n_omitted, 0, "{tag}");
    }
    // a slice-direction target must be present so RQ1 is grounded
    assert!(out
        .items
        .iter()
        .any(|i| i.target_type == TargetType::SliceDirection));
    assert!(out
        .items
        .iter()
        .any(|i| i.params.ablation == Some(AblationKind::TextOnly)));

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "dry run took {elapsed:?}");
    pass(10, "end-to-end dry run: accuracy 1.0 everywhere, within budget");
}
