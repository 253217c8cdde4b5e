//! Scratch probe: pathwise ladders for candidate start/horizon choices.

use stochsym::fixtures;
use stochsym::mc::{pathwise_check, PathwiseOptions};

fn main() {
    let grid: &[(&str, &[(&[f64], f64)])] = &[
        ("ex1", &[(&[1.0], 1.0), (&[1.0], 0.5), (&[0.5], 0.5)]),
        (
            "ex2",
            &[
                (&[1.0], 0.25),
                (&[0.65], 0.25),
                (&[0.65], 0.2),
                (&[0.6], 0.2),
                (&[0.6], 0.3),
            ],
        ),
        (
            "ex3",
            &[
                (&[0.0, 0.0], 0.25),
                (&[0.0, 0.0], 0.35),
                (&[0.2, 0.0], 0.25),
            ],
        ),
        ("ex6", &[(&[1.0], 1.0), (&[1.0], 0.5), (&[0.5], 1.0)]),
    ];
    for (name, combos) in grid {
        let c = fixtures::by_name(name).unwrap();
        let file = fixtures::load(&c).unwrap();
        let sys = file.sde();
        let cov = fixtures::case_cov(&c, &file).unwrap();
        let reduced = fixtures::golden_system(&c).unwrap().unwrap();
        for (x0, t_end) in *combos {
            let mut opts = PathwiseOptions::default();
            opts.t_end = *t_end;
            match pathwise_check(sys, &cov, &reduced, x0, &opts) {
                Ok(chk) => {
                    let meds: Vec<String> = chk
                        .levels
                        .iter()
                        .map(|l| format!("{:.2e}({})", l.median, l.compared_paths))
                        .collect();
                    let factors: Vec<String> = chk
                        .levels
                        .windows(2)
                        .map(|w| format!("{:.2}", w[0].median / w[1].median))
                        .collect();
                    println!(
                        "{name} x0={x0:?} t_end={t_end}: passes={} meds=[{}] factors=[{}]",
                        chk.passes,
                        meds.join(", "),
                        factors.join(", ")
                    );
                }
                Err(e) => println!("{name} x0={x0:?} t_end={t_end}: ERROR {e}"),
            }
        }
    }
}
