//! Named sub-seeds derived from one master seed, so that e.g. the shuffle
//! order can change while initialization stays fixed.

/// One round of splitmix64.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the stream name; stable across platforms and releases.
fn name_hash(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn derive(master: u64, name: &str) -> u64 {
    splitmix64(master ^ splitmix64(name_hash(name)))
}

/// Sub-seeds used by training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedStreams {
    pub init: u64,
    pub shuffle: u64,
    pub dropout: u64,
    pub data: u64,
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        SeedStreams {
            init: derive(master, "init"),
            shuffle: derive(master, "shuffle"),
            dropout: derive(master, "dropout"),
            data: derive(master, "data"),
        }
    }

    pub fn shuffle_for_epoch(&self, epoch: usize) -> u64 {
        splitmix64(self.shuffle ^ splitmix64(epoch as u64))
    }

    /// Graph seed for one example visit; independent of batch composition.
    pub fn dropout_for(&self, epoch: usize, example: usize) -> u64 {
        splitmix64(self.dropout ^ splitmix64((epoch as u64) << 32 ^ example as u64))
    }
}
