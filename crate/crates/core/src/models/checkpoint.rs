//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "VLRC"
//! version    u8       1
//! entries    until end of file, each:
//!   name_len u16
//!   name     name_len bytes, UTF-8
//!   rank     u8
//!   extents  rank * u32
//!   values   product(extents) * f64
//! ```
//!
//! Entries keep their write order, so saving the same model twice produces
//! identical bytes. Every model kind stores a leading `meta` entry (a rank-1
//! tensor) describing its structure:
//!
//! ```text
//! meta[0]      kind            1 classifier, 2 reconstruction subnet,
//!                              3 coupled reconstruction, 4 dual classifier
//! meta[1]      class_count     0 when the model has no classes
//! meta[2]      input_side      0 when the model is extent-agnostic
//! meta[3..6]   trunk filters n1, n2, n3
//! meta[6..9]   trunk filter sizes f1, f2, f3
//! meta[9]      fc width        0 when the model has no fc head
//! meta[10..13] shared filters k1, k2, k3 (0 for single-channel kinds)
//! meta[13]     dropout_rate
//! ```
//!
//! A fully coupled model and one saved with k = n explicitly are the same
//! structure, so their checkpoints agree byte for byte.

use crate::error::{Error, FormatError, Result};
use crate::kernels::{ConvLayerParams, FcLayerParams};
use crate::models::coupled::{CoupledConvLayer, DualClassifierNet, Pcsrn};
use crate::models::{ClassifierNet, SrNet};
use crate::tensor::Tensor;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::Read;
use std::path::Path;

const MAGIC: &[u8; 4] = b"VLRC";
const VERSION: u8 = 1;
const META_NAME: &str = "meta";
const META_LEN: usize = 14;

/// Model structure codes stored in a checkpoint's meta entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Classifier = 1,
    Sr = 2,
    Pcsrn = 3,
    Dual = 4,
}

impl ModelKind {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(ModelKind::Classifier),
            2 => Ok(ModelKind::Sr),
            3 => Ok(ModelKind::Pcsrn),
            4 => Ok(ModelKind::Dual),
            other => Err(FormatError::Invalid(format!("unknown model kind {other}")).into()),
        }
    }
}

/// An ordered list of named tensors with a deterministic byte encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor)>,
}

impl Default for Checkpoint {
    fn default() -> Self {
        Self::new()
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return Err(Error::InvalidParam {
                name: "name",
                message: "entry name too long for the format".into(),
            });
        }
        if tensor.rank() > u8::MAX as usize {
            return Err(Error::InvalidParam {
                name: "tensor",
                message: "rank too large for the format".into(),
            });
        }
        if tensor.shape().iter().any(|&e| e > u32::MAX as usize) {
            return Err(Error::InvalidParam {
                name: "tensor",
                message: "extent too large for the format".into(),
            });
        }
        if self.get(&name).is_some() {
            return Err(Error::InvalidParam {
                name: "name",
                message: format!("duplicate entry {name}"),
            });
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| FormatError::Invalid(format!("missing entry {name}")).into())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.push(VERSION);
        for (name, tensor) in &self.entries {
            buf.write_u16::<LittleEndian>(name.len() as u16)?;
            buf.extend_from_slice(name.as_bytes());
            buf.push(tensor.rank() as u8);
            for &e in tensor.shape() {
                buf.write_u32::<LittleEndian>(e as u32)?;
            }
            for &v in tensor.data() {
                buf.write_f64::<LittleEndian>(v)?;
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = std::io::Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic)
            .map_err(|_| FormatError::Truncated { what: "header" })?;
        if &magic != MAGIC {
            return Err(FormatError::BadMagic { expected: "VLRC" }.into());
        }
        let version = cur
            .read_u8()
            .map_err(|_| FormatError::Truncated { what: "version" })?;
        if version != VERSION {
            return Err(FormatError::Version {
                expected: VERSION,
                got: version,
            }
            .into());
        }
        let mut checkpoint = Checkpoint::new();
        while (cur.position() as usize) < bytes.len() {
            let name_len = cur
                .read_u16::<LittleEndian>()
                .map_err(|_| FormatError::Truncated { what: "entry name length" })?
                as usize;
            let mut name_bytes = vec![0u8; name_len];
            cur.read_exact(&mut name_bytes)
                .map_err(|_| FormatError::Truncated { what: "entry name" })?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| FormatError::Invalid("entry name is not UTF-8".into()))?;
            let rank = cur
                .read_u8()
                .map_err(|_| FormatError::Truncated { what: "entry rank" })?
                as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let e = cur
                    .read_u32::<LittleEndian>()
                    .map_err(|_| FormatError::Truncated { what: "entry extents" })?;
                shape.push(e as usize);
            }
            let elements = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .ok_or_else(|| FormatError::Invalid("extent product overflows".into()))?;
            // Bound the allocation by what the file can actually contain.
            let remaining = bytes.len() - cur.position() as usize;
            if elements.checked_mul(8).map_or(true, |b| b > remaining) {
                return Err(FormatError::Truncated {
                    what: "entry values",
                }
                .into());
            }
            let mut data = Vec::with_capacity(elements);
            for _ in 0..elements {
                data.push(cur.read_f64::<LittleEndian>().map_err(|_| {
                    FormatError::Truncated {
                        what: "entry values",
                    }
                })?);
            }
            if checkpoint.get(&name).is_some() {
                return Err(FormatError::Invalid(format!("duplicate entry {name}")).into());
            }
            checkpoint.entries.push((name, Tensor::from_vec(&shape, data)?));
        }
        Ok(checkpoint)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Structure record carried by a checkpoint's meta entry.
struct Meta {
    kind: ModelKind,
    class_count: usize,
    input_side: usize,
    filters: [usize; 3],
    filter_sizes: [usize; 3],
    fc_width: usize,
    shared: [usize; 3],
    dropout_rate: f64,
}

impl Meta {
    fn to_tensor(&self) -> Tensor {
        let v = vec![
            self.kind.code() as f64,
            self.class_count as f64,
            self.input_side as f64,
            self.filters[0] as f64,
            self.filters[1] as f64,
            self.filters[2] as f64,
            self.filter_sizes[0] as f64,
            self.filter_sizes[1] as f64,
            self.filter_sizes[2] as f64,
            self.fc_width as f64,
            self.shared[0] as f64,
            self.shared[1] as f64,
            self.shared[2] as f64,
            self.dropout_rate,
        ];
        Tensor::from_vec(&[META_LEN], v).expect("fixed meta length")
    }

    fn parse(tensor: &Tensor) -> Result<Self> {
        if tensor.shape() != [META_LEN] {
            return Err(FormatError::Invalid(format!(
                "meta entry must be {META_LEN} values, got shape {:?}",
                tensor.shape()
            ))
            .into());
        }
        let v = tensor.data();
        let field = |i: usize, name: &str| -> Result<usize> {
            let x = v[i];
            if x < 0.0 || x.fract() != 0.0 || x > u32::MAX as f64 {
                return Err(
                    FormatError::Invalid(format!("meta {name} must be a small integer, got {x}"))
                        .into(),
                );
            }
            Ok(x as usize)
        };
        Ok(Meta {
            kind: ModelKind::from_code(field(0, "kind")? as u8)?,
            class_count: field(1, "class_count")?,
            input_side: field(2, "input_side")?,
            filters: [field(3, "n1")?, field(4, "n2")?, field(5, "n3")?],
            filter_sizes: [field(6, "f1")?, field(7, "f2")?, field(8, "f3")?],
            fc_width: field(9, "fc_width")?,
            shared: [field(10, "k1")?, field(11, "k2")?, field(12, "k3")?],
            dropout_rate: v[13],
        })
    }
}

fn bias_tensor(bias: &[f64]) -> Tensor {
    Tensor::from_vec(&[bias.len()], bias.to_vec()).expect("rank-1 bias")
}

fn push_conv(cp: &mut Checkpoint, name: &str, layer: &ConvLayerParams) -> Result<()> {
    cp.push(format!("{name}.w"), layer.weights.clone())?;
    cp.push(format!("{name}.b"), bias_tensor(&layer.bias))
}

fn push_fc(cp: &mut Checkpoint, name: &str, layer: &FcLayerParams) -> Result<()> {
    cp.push(format!("{name}.w"), layer.weights.clone())?;
    cp.push(format!("{name}.b"), bias_tensor(&layer.bias))
}

fn read_conv(cp: &Checkpoint, name: &str) -> Result<ConvLayerParams> {
    let weights = cp.require(&format!("{name}.w"))?.clone();
    let bias = cp.require(&format!("{name}.b"))?.data().to_vec();
    ConvLayerParams::new(weights, bias)
}

fn read_fc(cp: &Checkpoint, name: &str) -> Result<FcLayerParams> {
    let weights = cp.require(&format!("{name}.w"))?.clone();
    let bias = cp.require(&format!("{name}.b"))?.data().to_vec();
    FcLayerParams::new(weights, bias)
}

fn push_coupled(cp: &mut Checkpoint, name: &str, layer: &CoupledConvLayer) -> Result<()> {
    push_conv(cp, &format!("{name}.shared"), &layer.shared)?;
    push_conv(cp, &format!("{name}.lr"), &layer.private_lr)?;
    push_conv(cp, &format!("{name}.hr"), &layer.private_hr)
}

fn read_coupled(cp: &Checkpoint, name: &str) -> Result<CoupledConvLayer> {
    Ok(CoupledConvLayer {
        shared: read_conv(cp, &format!("{name}.shared"))?,
        private_lr: read_conv(cp, &format!("{name}.lr"))?,
        private_hr: read_conv(cp, &format!("{name}.hr"))?,
    })
}

fn trunk_meta(conv: &[ConvLayerParams; 3]) -> ([usize; 3], [usize; 3]) {
    let mut filters = [0; 3];
    let mut sizes = [0; 3];
    for i in 0..3 {
        filters[i] = conv[i].out_channels();
        sizes[i] = conv[i].filter_size();
    }
    (filters, sizes)
}

fn coupled_trunk_meta(layers: &[CoupledConvLayer; 3]) -> ([usize; 3], [usize; 3], [usize; 3]) {
    let mut filters = [0; 3];
    let mut sizes = [0; 3];
    let mut shared = [0; 3];
    for i in 0..3 {
        filters[i] = layers[i].total_filters();
        sizes[i] = layers[i].filter_size();
        shared[i] = layers[i].shared_filters();
    }
    (filters, sizes, shared)
}

impl ClassifierNet {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        self.validate()?;
        let (filters, filter_sizes) = trunk_meta(&self.conv);
        let meta = Meta {
            kind: ModelKind::Classifier,
            class_count: self.class_count(),
            input_side: self.input_side,
            filters,
            filter_sizes,
            fc_width: self.fc4.out_features(),
            shared: [0; 3],
            dropout_rate: self.dropout_rate,
        };
        let mut cp = Checkpoint::new();
        cp.push(META_NAME, meta.to_tensor())?;
        for (i, layer) in self.conv.iter().enumerate() {
            push_conv(&mut cp, &format!("conv{}", i + 1), layer)?;
        }
        push_fc(&mut cp, "fc4", &self.fc4)?;
        push_fc(&mut cp, "fc5", &self.fc5)?;
        Ok(cp)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    fn from_checkpoint(cp: &Checkpoint, meta: &Meta) -> Result<Self> {
        let conv = [
            read_conv(cp, "conv1")?,
            read_conv(cp, "conv2")?,
            read_conv(cp, "conv3")?,
        ];
        let net = ClassifierNet::from_parts(
            conv,
            read_fc(cp, "fc4")?,
            read_fc(cp, "fc5")?,
            meta.dropout_rate,
            meta.input_side,
        )?;
        check_meta_trunk(&trunk_meta(&net.conv), meta)?;
        check_meta_value("class_count", net.class_count(), meta.class_count)?;
        check_meta_value("fc_width", net.fc4.out_features(), meta.fc_width)?;
        Ok(net)
    }
}

impl SrNet {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        self.validate()?;
        let (filters, filter_sizes) = trunk_meta(&self.conv);
        let meta = Meta {
            kind: ModelKind::Sr,
            class_count: 0,
            input_side: 0,
            filters,
            filter_sizes,
            fc_width: 0,
            shared: [0; 3],
            dropout_rate: 0.0,
        };
        let mut cp = Checkpoint::new();
        cp.push(META_NAME, meta.to_tensor())?;
        for (i, layer) in self.conv.iter().enumerate() {
            push_conv(&mut cp, &format!("conv{}", i + 1), layer)?;
        }
        push_conv(&mut cp, "conv4", &self.conv4)?;
        Ok(cp)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    fn from_checkpoint(cp: &Checkpoint, meta: &Meta) -> Result<Self> {
        let net = SrNet {
            conv: [
                read_conv(cp, "conv1")?,
                read_conv(cp, "conv2")?,
                read_conv(cp, "conv3")?,
            ],
            conv4: read_conv(cp, "conv4")?,
        };
        net.validate()?;
        check_meta_trunk(&trunk_meta(&net.conv), meta)?;
        Ok(net)
    }
}

impl Pcsrn {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        self.validate()?;
        let (filters, filter_sizes, shared) = coupled_trunk_meta(&self.layers);
        let meta = Meta {
            kind: ModelKind::Pcsrn,
            class_count: 0,
            input_side: 0,
            filters,
            filter_sizes,
            fc_width: 0,
            shared,
            dropout_rate: 0.0,
        };
        let mut cp = Checkpoint::new();
        cp.push(META_NAME, meta.to_tensor())?;
        for (i, layer) in self.layers.iter().enumerate() {
            push_coupled(&mut cp, &format!("conv{}", i + 1), layer)?;
        }
        push_conv(&mut cp, "conv4.lr", &self.conv4_lr)?;
        push_conv(&mut cp, "conv4.hr", &self.conv4_hr)?;
        Ok(cp)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    fn from_checkpoint(cp: &Checkpoint, meta: &Meta) -> Result<Self> {
        let net = Pcsrn {
            layers: [
                read_coupled(cp, "conv1")?,
                read_coupled(cp, "conv2")?,
                read_coupled(cp, "conv3")?,
            ],
            conv4_lr: read_conv(cp, "conv4.lr")?,
            conv4_hr: read_conv(cp, "conv4.hr")?,
        };
        net.validate()?;
        let (filters, filter_sizes, shared) = coupled_trunk_meta(&net.layers);
        check_meta_trunk(&(filters, filter_sizes), meta)?;
        for i in 0..3 {
            check_meta_value("shared filters", shared[i], meta.shared[i])?;
        }
        Ok(net)
    }
}

impl DualClassifierNet {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        self.validate()?;
        let (filters, filter_sizes, shared) = coupled_trunk_meta(&self.layers);
        let meta = Meta {
            kind: ModelKind::Dual,
            class_count: self.class_count(),
            input_side: self.input_side,
            filters,
            filter_sizes,
            fc_width: self.fc4_lr.out_features(),
            shared,
            dropout_rate: self.dropout_rate,
        };
        let mut cp = Checkpoint::new();
        cp.push(META_NAME, meta.to_tensor())?;
        for (i, layer) in self.layers.iter().enumerate() {
            push_coupled(&mut cp, &format!("conv{}", i + 1), layer)?;
        }
        push_fc(&mut cp, "fc4.lr", &self.fc4_lr)?;
        push_fc(&mut cp, "fc5.lr", &self.fc5_lr)?;
        push_fc(&mut cp, "fc4.hr", &self.fc4_hr)?;
        push_fc(&mut cp, "fc5.hr", &self.fc5_hr)?;
        Ok(cp)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    fn from_checkpoint(cp: &Checkpoint, meta: &Meta) -> Result<Self> {
        let net = DualClassifierNet {
            layers: [
                read_coupled(cp, "conv1")?,
                read_coupled(cp, "conv2")?,
                read_coupled(cp, "conv3")?,
            ],
            fc4_lr: read_fc(cp, "fc4.lr")?,
            fc5_lr: read_fc(cp, "fc5.lr")?,
            fc4_hr: read_fc(cp, "fc4.hr")?,
            fc5_hr: read_fc(cp, "fc5.hr")?,
            dropout_rate: meta.dropout_rate,
            input_side: meta.input_side,
        };
        net.validate()?;
        let (filters, filter_sizes, shared) = coupled_trunk_meta(&net.layers);
        check_meta_trunk(&(filters, filter_sizes), meta)?;
        for i in 0..3 {
            check_meta_value("shared filters", shared[i], meta.shared[i])?;
        }
        check_meta_value("class_count", net.class_count(), meta.class_count)?;
        check_meta_value("fc_width", net.fc4_lr.out_features(), meta.fc_width)?;
        Ok(net)
    }
}

fn check_meta_trunk(actual: &([usize; 3], [usize; 3]), meta: &Meta) -> Result<()> {
    for i in 0..3 {
        check_meta_value("filters", actual.0[i], meta.filters[i])?;
        check_meta_value("filter size", actual.1[i], meta.filter_sizes[i])?;
    }
    Ok(())
}

fn check_meta_value(name: &str, actual: usize, declared: usize) -> Result<()> {
    if actual != declared {
        return Err(FormatError::Invalid(format!(
            "meta declares {name} {declared} but tensors have {actual}"
        ))
        .into());
    }
    Ok(())
}

/// A model reconstructed from a checkpoint, tagged by its structure.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedModel {
    Classifier(ClassifierNet),
    Sr(SrNet),
    Pcsrn(Pcsrn),
    Dual(DualClassifierNet),
}

impl LoadedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            LoadedModel::Classifier(_) => ModelKind::Classifier,
            LoadedModel::Sr(_) => ModelKind::Sr,
            LoadedModel::Pcsrn(_) => ModelKind::Pcsrn,
            LoadedModel::Dual(_) => ModelKind::Dual,
        }
    }
}

/// Loads any checkpoint and rebuilds the model its meta entry declares.
pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let cp = Checkpoint::load(path)?;
    let meta = Meta::parse(cp.require(META_NAME)?)?;
    Ok(match meta.kind {
        ModelKind::Classifier => LoadedModel::Classifier(ClassifierNet::from_checkpoint(&cp, &meta)?),
        ModelKind::Sr => LoadedModel::Sr(SrNet::from_checkpoint(&cp, &meta)?),
        ModelKind::Pcsrn => LoadedModel::Pcsrn(Pcsrn::from_checkpoint(&cp, &meta)?),
        ModelKind::Dual => LoadedModel::Dual(DualClassifierNet::from_checkpoint(&cp, &meta)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::coupled::attach_dual_heads;
    use crate::models::{CouplingConfig, NetworkConfig};
    use crate::rng::RandomState;
    use tempfile::tempdir;

    fn tiny_config() -> NetworkConfig {
        NetworkConfig {
            filters: [3, 4, 2],
            filter_sizes: [3, 3, 1],
            fc_width: 5,
            class_count: 3,
        }
    }

    #[test]
    fn raw_round_trip_and_byte_stability() {
        let mut cp = Checkpoint::new();
        cp.push("a", Tensor::from_vec(&[2, 2], vec![1.0, -2.5, 0.0, 4.0]).unwrap())
            .unwrap();
        cp.push("b.bias", Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap())
            .unwrap();
        cp.push("empty", Tensor::zeros(&[0, 2])).unwrap();
        let bytes = cp.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, cp);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn push_rejects_duplicates() {
        let mut cp = Checkpoint::new();
        cp.push("a", Tensor::zeros(&[1])).unwrap();
        assert!(cp.push("a", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn rejects_bad_magic_version_truncation() {
        let mut cp = Checkpoint::new();
        cp.push("a", Tensor::zeros(&[2])).unwrap();
        let good = cp.to_bytes().unwrap();

        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&magic),
            Err(Error::Format(FormatError::BadMagic { .. }))
        ));

        let mut version = good.clone();
        version[4] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&version),
            Err(Error::Format(FormatError::Version { got: 9, .. }))
        ));

        assert!(matches!(
            Checkpoint::from_bytes(&good[..good.len() - 1]),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));

        // An entry declaring more values than the file holds must not
        // allocate past the buffer.
        let mut huge = good.clone();
        // extents live right after name ("a"): 4+1 header, 2 len, 1 name,
        // 1 rank, then u32 extent.
        huge[9] = 0xff;
        huge[10] = 0xff;
        huge[11] = 0xff;
        huge[12] = 0x7f;
        assert!(matches!(
            Checkpoint::from_bytes(&huge),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));
    }

    #[test]
    fn classifier_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.vlrc");
        let rs = RandomState::new(11);
        let net = ClassifierNet::build(&tiny_config(), 8, 0.5, &rs).unwrap();
        net.save(&path).unwrap();
        match load_model(&path).unwrap() {
            LoadedModel::Classifier(back) => assert_eq!(back, net),
            other => panic!("wrong kind {:?}", other.kind()),
        }
    }

    #[test]
    fn sr_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.vlrc");
        let rs = RandomState::new(12);
        let net = SrNet::build(&tiny_config(), &rs).unwrap();
        net.save(&path).unwrap();
        match load_model(&path).unwrap() {
            LoadedModel::Sr(back) => assert_eq!(back, net),
            other => panic!("wrong kind {:?}", other.kind()),
        }
    }

    #[test]
    fn coupled_round_trips_preserve_sharing() {
        let dir = tempdir().unwrap();
        let rs = RandomState::new(13);
        let cfg = tiny_config();
        let coupling = CouplingConfig { shared: [2, 3, 1] };
        let pcsrn = Pcsrn::build(&cfg, &coupling, &rs).unwrap();
        let p_path = dir.path().join("p.vlrc");
        pcsrn.save(&p_path).unwrap();
        match load_model(&p_path).unwrap() {
            LoadedModel::Pcsrn(back) => {
                assert_eq!(back, pcsrn);
                assert_eq!(back.shared_counts(), [2, 3, 1]);
            }
            other => panic!("wrong kind {:?}", other.kind()),
        }

        let dual = attach_dual_heads(&pcsrn, &cfg, 8, 0.3, &rs).unwrap();
        let d_path = dir.path().join("d.vlrc");
        dual.save(&d_path).unwrap();
        match load_model(&d_path).unwrap() {
            LoadedModel::Dual(back) => {
                assert_eq!(back, dual);
                // The reloaded model decouples to the same deployment net.
                assert_eq!(
                    back.decouple().unwrap(),
                    dual.decouple().unwrap()
                );
            }
            other => panic!("wrong kind {:?}", other.kind()),
        }
    }

    #[test]
    fn save_is_byte_deterministic() {
        let dir = tempdir().unwrap();
        let rs = RandomState::new(14);
        let cfg = tiny_config();
        let net = ClassifierNet::build(&cfg, 8, 0.5, &rs).unwrap();
        let a = dir.path().join("a.vlrc");
        let b = dir.path().join("b.vlrc");
        net.save(&a).unwrap();
        net.save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn meta_mismatch_is_rejected() {
        let rs = RandomState::new(15);
        let net = ClassifierNet::build(&tiny_config(), 8, 0.5, &rs).unwrap();
        let cp = net.to_checkpoint().unwrap();
        // Rebuild with a meta that lies about the trunk widths.
        let mut forged = Checkpoint::new();
        for (name, tensor) in cp.entries() {
            if name == META_NAME {
                let mut t = tensor.clone();
                t.data_mut()[3] = 99.0;
                forged.push(name, t).unwrap();
            } else {
                forged.push(name, tensor.clone()).unwrap();
            }
        }
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.vlrc");
        forged.save(&path).unwrap();
        assert!(load_model(&path).is_err());
    }
}
