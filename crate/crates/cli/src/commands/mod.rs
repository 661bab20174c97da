mod attack;
mod gen_data;
mod report_cmd;
mod saliency;
mod train;

pub use attack::{run_attack, AttackArgs, AttackMode};
pub use gen_data::{run_gen_data, GenDataArgs};
pub use report_cmd::{run_report, ReportArgs};
pub use saliency::{run_saliency, SaliencyArgs};
pub use train::{run_train, TrainArgs};
