//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Set `ACCEPTANCE_ONLY=3,4` to
//! run a subset. Exits nonzero if any selected criterion fails.

mod c1_oracles;
mod c2_gradients;
mod c3_ffc;
mod c4_preservation;
mod c5_masks;
mod c6_toy_seg;
mod c7_toy_inpaint;
mod c8_freeze;
mod c9_determinism;
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

type Check = fn() -> Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    check: Check,
}

fn main() {
    let min = |m: u64| Duration::from_secs(60 * m);
    let all = [
        Criterion {
            id: 1,
            name: "loss oracles",
            budget: min(1),
            check: c1_oracles::run,
        },
        Criterion {
            id: 2,
            name: "gradient suite",
            budget: min(5),
            check: c2_gradients::run,
        },
        Criterion {
            id: 3,
            name: "FFC structure",
            budget: min(1),
            check: c3_ffc::run,
        },
        Criterion {
            id: 4,
            name: "preservation",
            budget: min(1),
            check: c4_preservation::run,
        },
        Criterion {
            id: 5,
            name: "mask protocol",
            budget: min(1),
            check: c5_masks::run,
        },
        Criterion {
            id: 6,
            name: "toy segmentation",
            budget: min(10),
            check: c6_toy_seg::run,
        },
        Criterion {
            id: 7,
            name: "toy inpainting",
            budget: min(30),
            check: c7_toy_inpaint::run,
        },
        Criterion {
            id: 8,
            name: "freeze contract",
            budget: min(1),
            check: c8_freeze::run,
        },
        Criterion {
            id: 9,
            name: "CLI determinism",
            budget: min(10),
            check: c9_determinism::run,
        },
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for c in all
        .iter()
        .filter(|c| only.as_ref().is_none_or(|o| o.contains(&c.id)))
    {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = t.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > c.budget => {
                Err(format!("{detail}; took {took:.1?}, budget {:?}", c.budget))
            }
            other => other,
        };
        match outcome {
            Ok(detail) => println!(
                "criterion {} ({}): PASS [{:.1?}] {detail}",
                c.id, c.name, took
            ),
            Err(why) => {
                failed += 1;
                println!("criterion {} ({}): FAIL [{:.1?}] {why}", c.id, c.name, took);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
