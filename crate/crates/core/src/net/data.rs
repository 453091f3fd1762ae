use std::io;

/// Samples stored row-wise; the first `n_train` rows are the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
    /// Sampling box of the inputs.
    pub bounds: Vec<(f64, f64)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn m(&self) -> usize {
        self.input_names.len()
    }

    pub fn p(&self) -> usize {
        self.output_names.len()
    }

    pub fn train_x(&self) -> &[Vec<f64>] {
        &self.inputs[..self.n_train]
    }

    pub fn train_y(&self) -> &[Vec<f64>] {
        &self.targets[..self.n_train]
    }

    pub fn val_x(&self) -> &[Vec<f64>] {
        &self.inputs[self.n_train..]
    }

    pub fn val_y(&self) -> &[Vec<f64>] {
        &self.targets[self.n_train..]
    }

    /// Header `x…, y…`, then one sample per row.
    pub fn write_csv<W: io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.input_names.iter().chain(&self.output_names))?;
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            out.write_record(x.iter().chain(y).map(|v| format!("{v:e}")))?;
        }
        out.flush()?;
        Ok(())
    }
}
