use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fastattn::toynet::ReductionOp;

#[derive(Debug, Parser)]
#[command(name = "fastattn", version, about = "Verification, timing and cost reports for linear-order cosine attention")]
pub struct Cli {
    /// Seed for every generated input and weight.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = DtypeArg::F64)]
    pub dtype: DtypeArg,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DtypeArg {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run invariant suites; exit 1 if any check fails.
    Verify(VerifyArgs),
    /// Time attention variants over a grid of sizes.
    Bench(BenchArgs),
    /// Analytic cost of the attention modules.
    Flops(FlopsArgs),
    /// Stream a frame fixture through the sliding-window cache.
    Stream(StreamArgs),
    /// Cost and forward time of the toy network per reduction placement.
    Placement(PlacementArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Tensor,
    Equivalence,
    Boundedness,
    Gradients,
    Cost,
    Streaming,
    Flops,
    Table1,
    Toynet,
    All,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Suite to run. Defaults to `all`, or to the fixture check alone when
    /// `--fixture` is given.
    #[arg(long, value_enum)]
    pub suite: Option<Suite>,
    /// Directory with query/key/value/expected tensor files to check.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// Write a golden fixture to this directory and exit.
    #[arg(long, conflicts_with_all = ["suite", "fixture"])]
    pub emit_fixture: Option<PathBuf>,
    /// With `--emit-fixture`: shift expected[0,0] by +1e-3.
    #[arg(long, requires = "emit_fixture")]
    pub broken: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, ValueEnum)]
pub enum Variant {
    Softmax,
    CosineQuadratic,
    Fast,
    Dot,
    StreamFast,
    StreamNaive,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Softmax => "softmax",
            Variant::CosineQuadratic => "cosine_quadratic",
            Variant::Fast => "fast",
            Variant::Dot => "dot",
            Variant::StreamFast => "stream_fast",
            Variant::StreamNaive => "stream_naive",
        }
    }

    /// Variants that materialize an `n×n` affinity.
    pub fn is_quadratic(self) -> bool {
        matches!(self, Variant::Softmax | Variant::CosineQuadratic | Variant::StreamNaive)
    }

    pub fn is_streaming(self) -> bool {
        matches!(self, Variant::StreamFast | Variant::StreamNaive)
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [256, 1024, 4096])]
    pub n: Vec<usize>,
    #[arg(long = "channels", value_delimiter = ',', default_values_t = [64])]
    pub channels: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [32])]
    pub cprime: Vec<usize>,
    /// Window lengths for the stream variants; other variants use t=1.
    #[arg(long, value_delimiter = ',', default_values_t = [1])]
    pub t: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Variant::Softmax, Variant::Fast])]
    pub variants: Vec<Variant>,
    /// Timed repeats per grid point (median reported, at least 5).
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Largest n×n affinity the quadratic variants may allocate.
    #[arg(long, default_value_t = 2 << 30)]
    pub budget_bytes: u64,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    /// Published table next to the model (default when no shape is given).
    #[arg(long)]
    pub table1: bool,
    #[arg(long = "channels", requires_all = ["height", "width"], conflicts_with = "table1")]
    pub channels: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long, default_value_t = fastattn::flops::DEFAULT_ATTENTION_CHANNELS)]
    pub cprime: usize,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    #[arg(long, required_unless_present = "generate")]
    pub manifest: Option<PathBuf>,
    /// Window length; defaults to the manifest's t.
    #[arg(long)]
    pub window: Option<usize>,
    /// Compare every frame against the direct quadratic evaluation.
    #[arg(long)]
    pub check: bool,
    /// Write a seeded fixture to this directory and exit.
    #[arg(long, conflicts_with = "manifest")]
    pub generate: Option<PathBuf>,
    #[arg(long, default_value_t = 1024)]
    pub n: usize,
    #[arg(long, default_value_t = 32)]
    pub cprime: usize,
    #[arg(long = "channels", default_value_t = 64)]
    pub channels: usize,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value_t = 2)]
    pub t: usize,
}

#[derive(Debug, Args)]
pub struct PlacementArgs {
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, value_enum, default_value_t = OpArg::StridedConv)]
    pub op: OpArg,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OpArg {
    StridedConv,
    MaxPool,
    AvgPool,
}

impl From<OpArg> for ReductionOp {
    fn from(op: OpArg) -> Self {
        match op {
            OpArg::StridedConv => ReductionOp::StridedConv,
            OpArg::MaxPool => ReductionOp::MaxPool,
            OpArg::AvgPool => ReductionOp::AvgPool,
        }
    }
}
