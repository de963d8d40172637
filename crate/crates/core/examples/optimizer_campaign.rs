//! Random vs Bayesian campaigns against a nearest-neighbor oracle; prints final bests and median curves.

use labrun_core::optimizer::{
    campaign_report, median, proposer_by_name, run_campaign, synthetic_dataset, Dl, NearestOracle,
    ParamPoint, Surrogate, DEFAULT_BUDGET,
};

fn main() {
    let surrogate = Surrogate::new(ParamPoint {
        pc: 220.0,
        pp: 3,
        dp: 10,
        ds: 25.0,
        dl: Dl::Long,
        kp: 18,
        p3: 10,
    });
    let dataset = synthetic_dataset(4000, 1, |p| surrogate.eval(p));
    let oracle = NearestOracle::new(dataset).expect("oracle");
    let mut campaigns = Vec::new();
    for name in ["random", "bayes"] {
        let mut finals = Vec::new();
        for seed in 0..10 {
            let mut proposer = proposer_by_name(name).expect("builtin proposer");
            let c = run_campaign(proposer.as_mut(), &oracle, DEFAULT_BUDGET, Vec::new(), seed)
                .expect("campaign");
            finals.push(c.final_best().unwrap_or(f64::NAN));
            campaigns.push(c);
        }
        println!("{name:<7} median final best {:.4}", median(&finals));
    }
    print!("{}", campaign_report(&campaigns).curves_csv());
}
