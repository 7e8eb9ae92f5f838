use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::edge::EpnNet;
use crate::error::Result;
use crate::harness::{ReconConfig, VariantKind};
use crate::mri::{zero_filled_traced, CoilSensitivities, SamplingMask};
use crate::sme::SmeNet;
use crate::tensor::layers::{Conv2d, ConvSpec};
use crate::tensor::{ComplexTensor, ParamStore, RealTensor, Trace, Var};

use super::{channels_to_image, image_to_channels, DcContext, EamBlock, RdcnBlock};

#[derive(Clone, Debug)]
enum Fusion {
    None,
    Attention(Vec<EamBlock>),
    Shared(EamBlock),
    Concat(Vec<Conv2d>),
}

/// The assembled network: sensitivity estimation, image head, cascades of
/// de-aliasing blocks and (depending on the variant) an edge branch shared
/// by every cascade.
#[derive(Clone, Debug)]
pub struct EamriModel {
    config: ReconConfig,
    store: ParamStore,
    sme: SmeNet,
    head: RdcnBlock,
    cascades: Vec<RdcnBlock>,
    epn: Option<EpnNet>,
    fusion: Fusion,
}

/// Traced outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// Final image `[H, W, 2]`.
    pub image: Var,
    /// One predicted edge map `[H, W]` per cascade (empty for M1).
    pub edges: Vec<Var>,
    /// Estimated sensitivity maps `[nc, H, W, 2]`.
    pub maps: Var,
    /// Zero-filled image from the estimated maps.
    pub zero_filled: Var,
    /// Attention matrices of each attention pass.
    pub attention: Vec<Var>,
    /// Number of edge-network invocations.
    pub edge_calls: usize,
}

impl EamriModel {
    /// Builds the variant named in `config` with weights drawn from
    /// `config.seed`.
    pub fn new(config: &ReconConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (c, m) = (config.channels, config.recursions);
        let sme = SmeNet::new(&mut store, "sme", config.sme_channels(), m, &mut rng)?;
        let head = RdcnBlock::new(&mut store, "head", config.head_channels(), m, &mut rng)?;
        let cascades = (0..config.cascades)
            .map(|i| RdcnBlock::new(&mut store, &format!("cascade{i}.rdcn"), c, m, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let epn = match config.variant {
            VariantKind::M1 => None,
            _ => Some(EpnNet::new(&mut store, "epn", c, config.msrb_count, &mut rng)?),
        };
        let eam = |store: &mut ParamStore, name: &str, rng: &mut ChaCha8Rng| {
            EamBlock::new(store, name, c, config.heads, config.literal_alpha, rng)
        };
        let fusion = match config.variant {
            VariantKind::M1 => Fusion::None,
            VariantKind::Full => Fusion::Attention(
                (0..config.cascades)
                    .map(|i| eam(&mut store, &format!("cascade{i}.eam"), &mut rng))
                    .collect::<Result<_>>()?,
            ),
            VariantKind::M3 => Fusion::Shared(eam(&mut store, "eam", &mut rng)?),
            VariantKind::M2 => Fusion::Concat(
                (0..config.cascades)
                    .map(|i| {
                        Conv2d::new(
                            &mut store,
                            &format!("cascade{i}.concat"),
                            ConvSpec::new(3, 2, 1).zero(),
                            &mut rng,
                        )
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(Self {
            config: config.clone(),
            store,
            sme,
            head,
            cascades,
            epn,
            fusion,
        })
    }

    pub fn config(&self) -> &ReconConfig {
        &self.config
    }

    /// Replaces the step budget and logging interval, the only settings
    /// that may change when training resumes.
    pub fn set_schedule(&mut self, steps: usize, eval_every: usize) -> Result<()> {
        let next = ReconConfig {
            steps,
            eval_every,
            ..self.config.clone()
        };
        next.validate()?;
        self.config = next;
        Ok(())
    }

    pub fn variant(&self) -> VariantKind {
        self.config.variant
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn sme(&self) -> &SmeNet {
        &self.sme
    }

    pub fn cascades(&self) -> &[RdcnBlock] {
        &self.cascades
    }

    /// Traced forward pass from k-space `y [nc, H, W, 2]`.
    pub fn forward(&self, t: &mut Trace, y: Var, mask: &SamplingMask) -> Result<ModelOutput> {
        self.forward_with(t, &self.store, y, mask)
    }

    /// Forward pass reading parameters from `store`, which must come from
    /// this model (used by finite-difference checks on perturbed copies).
    pub fn forward_with(&self, t: &mut Trace, store: &ParamStore, y: Var, mask: &SamplingMask) -> Result<ModelOutput> {
        let maps = self.sme.estimate(t, store, y, mask)?;
        let weights = mask.weights();
        let dc = DcContext {
            y,
            maps,
            mask: &weights,
        };
        let zero_filled = zero_filled_traced(t, y, maps)?;
        let mut x = self.head.forward(t, store, zero_filled, &dc)?;
        let (h, w) = (t.shape(x)[0], t.shape(x)[1]);
        let mut edges = Vec::new();
        let mut attention = Vec::new();
        let mut edge_calls = 0;
        for (i, rdcn) in self.cascades.iter().enumerate() {
            let edge = match &self.epn {
                Some(epn) => {
                    let xc = image_to_channels(t, x)?;
                    edge_calls += 1;
                    let e = epn.forward(t, store, xc)?;
                    edges.push(t.reshape(e, &[h, w])?);
                    Some(e)
                }
                None => None,
            };
            x = rdcn.forward(t, store, x, &dc)?;
            x = match (&self.fusion, edge) {
                (Fusion::Attention(blocks), Some(e)) => {
                    let out = blocks[i].forward(t, store, x, e, &dc)?;
                    attention.push(out.attention);
                    out.image
                }
                (Fusion::Shared(block), Some(e)) => {
                    let out = block.forward(t, store, x, e, &dc)?;
                    attention.push(out.attention);
                    out.image
                }
                (Fusion::Concat(convs), Some(e)) => {
                    let xc = image_to_channels(t, x)?;
                    let cat = t.concat_channels(&[xc, e])?;
                    let r = convs[i].forward(t, store, cat)?;
                    let sum = t.add(xc, r)?;
                    let img = channels_to_image(t, sum)?;
                    dc.apply(t, img)?
                }
                _ => x,
            };
        }
        Ok(ModelOutput {
            image: x,
            edges,
            maps,
            zero_filled,
            attention,
            edge_calls,
        })
    }
}

/// Untraced reconstruction results.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub image: ComplexTensor,
    pub edges: Vec<RealTensor>,
    pub maps: CoilSensitivities,
    pub zero_filled: ComplexTensor,
}

impl EamriModel {
    /// Runs the network on k-space `y [nc, H, W]` and copies out the results.
    pub fn reconstruct(&self, y: &ComplexTensor, mask: &SamplingMask) -> Result<Reconstruction> {
        let mut t = Trace::new();
        let yv = t.constant(y.clone().into_interleaved());
        let out = self.forward(&mut t, yv, mask)?;
        let complex = |v: Var| ComplexTensor::from_interleaved(t.value(v).clone());
        Ok(Reconstruction {
            image: complex(out.image)?,
            edges: out.edges.iter().map(|&e| t.value(e).clone()).collect(),
            maps: CoilSensitivities::new(complex(out.maps)?)?,
            zero_filled: complex(out.zero_filled)?,
        })
    }
}
