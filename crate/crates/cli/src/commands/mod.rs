mod data;
mod evaluate;
mod hashtag;
mod predict;
mod prep;
mod train;

use std::io::Write;

use vishash::Result;

use crate::cli::Command;

pub use data::load_records;

pub fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Synth(a) => prep::synth(&a, out),
        Command::Curate(a) => prep::curate(&a, out),
        Command::TrainText(a) => train::train_text(&a, out),
        Command::TrainVision(a) => train::train_vision(&a, out),
        Command::Predict(a) => predict::predict(&a, out),
        Command::Hashtag(a) => hashtag::hashtag(&a, out),
        Command::Evaluate(a) => evaluate::evaluate(&a, out),
        Command::Baseline(a) => evaluate::baseline(&a, out),
        Command::Serve(a) => crate::serve::serve(&a),
    }
}
