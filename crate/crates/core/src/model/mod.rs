pub mod checkpoint;
pub mod config;
pub mod net;
pub mod rf;

pub use checkpoint::{load_network, save_network, CheckpointHeader};
pub use config::{BlockKind, Mode, NetworkConfig, PoolSpec, StageSpec, StemSpec};
pub use net::{build_network, AttnOut, BnStat, ClsOut, Network, TrunkOut, BN_EPS};
pub use rf::{receptive_field, ConvGeometry, ProbeField, ReceptiveFieldInfo};
