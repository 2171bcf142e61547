//! The image-to-image network `G(x)` behind every regularizer.
//!
//! A miniature residual encoder-decoder: a head conv lifts the grayscale
//! image to `base_channels` features; each scale applies residual blocks
//! (conv-ELU-conv with skip) and descends by a stride-2 conv that doubles the
//! channels; the decoder mirrors this with zero-fill-upsample + conv
//! (a transposed convolution) and additive encoder skips; a tail conv drops
//! back to one channel, and a global input-to-output skip makes `G` exactly
//! the identity at zero weights. All convolutions use circular padding, so
//! no pad/crop bookkeeping is needed anywhere.
//!
//! The whole forward pass is expressed in tape primitives (`emit`), which is
//! what makes the exact input/weight Jacobian products — and their second
//! derivatives during training — available from the autodiff module.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::fs;
use std::path::Path;

pub const WEIGHT_MAGIC: &[u8; 4] = b"ELDR";
pub const WEIGHT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchConfig {
    /// Number of resolution scales; scale `s` runs at `base_channels * 2^s`
    /// channels and `1/2^s` of the input resolution.
    pub num_scales: usize,
    /// Residual blocks per scale stage (encoder, bottom, and decoder each
    /// get this many).
    pub blocks_per_scale: usize,
    pub base_channels: usize,
    /// Odd conv kernel extent.
    pub kernel_size: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig { num_scales: 2, blocks_per_scale: 2, base_channels: 32, kernel_size: 3 }
    }
}

/// Name and shape of one learnable array, in serialization order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_scales == 0 || self.base_channels == 0 || self.blocks_per_scale == 0 {
            return Err(Error::config(format!(
                "network: scales/blocks/channels must be positive, got {self:?}"
            )));
        }
        if self.kernel_size % 2 == 0 || self.kernel_size == 0 {
            return Err(Error::config(format!(
                "network: kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        Ok(())
    }

    fn channels_at(&self, scale: usize) -> usize {
        self.base_channels << scale
    }

    /// Input extents must be divisible by this (one halving per extra scale).
    pub fn spatial_divisor(&self) -> usize {
        1 << (self.num_scales - 1)
    }

    /// Learnable arrays in a fixed order; `emit` consumes them in exactly
    /// this order and the weight file stores them in exactly this order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let k = self.kernel_size;
        let mut specs = Vec::new();
        let mut push = |name: String, shape: Vec<usize>| {
            specs.push(ParamSpec { name, shape });
        };
        let conv = |push: &mut dyn FnMut(String, Vec<usize>), prefix: &str, co: usize, ci: usize| {
            push(format!("{prefix}.k"), vec![co, ci, k, k]);
            push(format!("{prefix}.b"), vec![co]);
        };
        let blocks = |push: &mut dyn FnMut(String, Vec<usize>), prefix: &str, c: usize, n: usize| {
            for b in 0..n {
                for half in 0..2 {
                    push(format!("{prefix}.res{b}.conv{half}.k"), vec![c, c, k, k]);
                    push(format!("{prefix}.res{b}.conv{half}.b"), vec![c]);
                }
            }
        };
        conv(&mut push, "head", self.base_channels, 1);
        for s in 0..self.num_scales - 1 {
            blocks(&mut push, &format!("enc{s}"), self.channels_at(s), self.blocks_per_scale);
            conv(&mut push, &format!("down{s}"), self.channels_at(s + 1), self.channels_at(s));
        }
        blocks(
            &mut push,
            "bottom",
            self.channels_at(self.num_scales - 1),
            self.blocks_per_scale,
        );
        for s in (0..self.num_scales - 1).rev() {
            conv(&mut push, &format!("up{s}"), self.channels_at(s), self.channels_at(s + 1));
            blocks(&mut push, &format!("dec{s}"), self.channels_at(s), self.blocks_per_scale);
        }
        conv(&mut push, "tail", 1, self.base_channels);
        specs
    }

    /// Total learnable scalars. Head `c*k^2+c`; each residual block
    /// `2(c^2 k^2 + c)`; each down/up conv `co*ci*k^2+co`; tail `c*k^2+1`;
    /// summed over the stage layout produced by `param_specs`.
    pub fn param_count(&self) -> usize {
        self.param_specs().iter().map(|p| p.shape.iter().product::<usize>()).sum()
    }
}

/// A network: architecture plus one tensor per `ParamSpec`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub arch: ArchConfig,
    pub params: Vec<Tensor>,
}

/// Fresh weights: kernels zero-mean normal with std `1/sqrt(ci*k*k)`
/// (fan-in scaled), biases zero. Identical seeds give identical weights.
pub fn build_network(arch: &ArchConfig, seed: u64) -> Result<NetworkWeights> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    for spec in arch.param_specs() {
        if spec.shape.len() == 4 {
            let fan_in = (spec.shape[1] * spec.shape[2] * spec.shape[3]) as f64;
            let normal = Normal::new(0.0, (1.0 / fan_in).sqrt()).unwrap();
            let n: usize = spec.shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            params.push(Tensor::from_vec(&spec.shape, data)?);
        } else {
            params.push(Tensor::zeros(&spec.shape));
        }
    }
    Ok(NetworkWeights { arch: arch.clone(), params })
}

impl NetworkWeights {
    /// Scale all kernels and biases by `c` (used by tests to reach the
    /// small-weight / contractive regime).
    pub fn scale_all(&mut self, c: f64) {
        for p in &mut self.params {
            *p = p.scale(c);
        }
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<(usize, usize)> {
        if shape.len() != 2 {
            return Err(Error::shape(format!("network input must be [h,w], got {shape:?}")));
        }
        let d = self.arch.spatial_divisor();
        if shape[0] % d != 0 || shape[1] % d != 0 {
            return Err(Error::shape(format!(
                "network input {}x{} not divisible by {d} (required by {} scales)",
                shape[0], shape[1], self.arch.num_scales
            )));
        }
        Ok((shape[0], shape[1]))
    }

    /// Record the whole forward pass on `tape`. `param_ids` must follow
    /// `param_specs` order; returns the node holding `G(x)` with shape
    /// `[h,w]`.
    pub fn emit(&self, tape: &mut Tape, param_ids: &[NodeId], x: NodeId) -> Result<NodeId> {
        let arch = &self.arch;
        if param_ids.len() != self.params.len() {
            return Err(Error::shape(format!(
                "network expects {} parameter nodes, got {}",
                self.params.len(),
                param_ids.len()
            )));
        }
        let (h, w) = self.check_input(tape.shape_of(x))?;
        let mut cursor = 0usize;
        let next = |cursor: &mut usize| {
            let id = param_ids[*cursor];
            *cursor += 1;
            id
        };

        let conv = |tape: &mut Tape, cursor: &mut usize, x: NodeId| -> Result<NodeId> {
            let k = next(cursor);
            let b = next(cursor);
            let c = tape.conv2d(x, k)?;
            tape.add_bias(c, b)
        };
        let res_blocks = |tape: &mut Tape, cursor: &mut usize, x: NodeId| -> Result<NodeId> {
            let mut cur = x;
            for _ in 0..arch.blocks_per_scale {
                let a = conv(tape, cursor, cur)?;
                let e = tape.elu(a);
                let c = conv(tape, cursor, e)?;
                cur = tape.add(cur, c)?;
            }
            Ok(cur)
        };

        let x3 = tape.reshape(x, &[1, h, w])?;
        let mut cur = conv(tape, &mut cursor, x3)?;
        let mut skips = Vec::new();
        for _ in 0..arch.num_scales - 1 {
            cur = res_blocks(tape, &mut cursor, cur)?;
            skips.push(cur);
            let k = next(&mut cursor);
            let b = next(&mut cursor);
            let c = tape.conv2d(cur, k)?;
            let d = tape.downsample2(c)?;
            cur = tape.add_bias(d, b)?;
        }
        cur = res_blocks(tape, &mut cursor, cur)?;
        for s in (0..arch.num_scales - 1).rev() {
            let k = next(&mut cursor);
            let b = next(&mut cursor);
            let u = tape.upsample_zero2(cur)?;
            let c = tape.conv2d(u, k)?;
            let up = tape.add_bias(c, b)?;
            cur = tape.add(up, skips[s])?;
            cur = res_blocks(tape, &mut cursor, cur)?;
        }
        let t = conv(tape, &mut cursor, cur)?;
        let t2 = tape.reshape(t, &[h, w])?;
        tape.add(x, t2)
    }

    /// Record the forward pass with weights and input as leaves; used by all
    /// gradient paths.
    pub fn record(&self, x: &Tensor) -> Result<(Tensor, NetRecording)> {
        self.check_input(x.shape())?;
        let mut tape = Tape::new();
        let param_ids: Vec<NodeId> =
            self.params.iter().map(|p| tape.input(p.clone())).collect();
        let x_id = tape.input(x.clone());
        let out_id = self.emit(&mut tape, &param_ids, x_id)?;
        let out = tape.value(out_id).clone();
        Ok((out, NetRecording { tape, param_ids, x_id, out_id }))
    }

    /// `G(x)`.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.record(x)?.0)
    }

    /// `J_G(x)^T v`: gradient of `<v, G(x)>` in the input.
    pub fn vjp_input(&self, x: &Tensor, v: &Tensor) -> Result<Tensor> {
        let (_, mut rec) = self.record(x)?;
        let v_id = rec.tape.input(v.clone());
        let g = rec.tape.vjp(&[rec.out_id], &[v_id], &[rec.x_id])?;
        Ok(rec.tape.value(g[0]).clone())
    }

    /// Gradient of `<v, G(x)>` in every weight tensor, in `param_specs` order.
    pub fn vjp_weights(&self, x: &Tensor, v: &Tensor) -> Result<Vec<Tensor>> {
        let (_, mut rec) = self.record(x)?;
        let v_id = rec.tape.input(v.clone());
        let g = rec.tape.vjp(&[rec.out_id], &[v_id], &rec.param_ids.clone())?;
        Ok(g.into_iter().map(|id| rec.tape.value(id).clone()).collect())
    }

    // ---- weight file format --------------------------------------------------
    //
    // magic "ELDR" | version u8 | manifest length u32 LE | manifest text |
    // raw f64 little-endian arrays in manifest order.
    //
    // The manifest's first line fixes the architecture
    // (`arch scales=S blocks=B channels=C kernel=K`); each following line is
    // `<name> <extent>...`. Loading re-derives the expected specs from the
    // arch line and requires an exact match, so a tampered extent or a
    // truncated payload is rejected before any tensor is built.

    pub fn manifest(&self) -> String {
        let a = &self.arch;
        let mut m = format!(
            "arch scales={} blocks={} channels={} kernel={}\n",
            a.num_scales, a.blocks_per_scale, a.base_channels, a.kernel_size
        );
        for spec in a.param_specs() {
            m.push_str(&spec.name);
            for d in &spec.shape {
                m.push_str(&format!(" {d}"));
            }
            m.push('\n');
        }
        m
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let manifest = self.manifest();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(WEIGHT_MAGIC);
        bytes.push(WEIGHT_VERSION);
        bytes.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        bytes.extend_from_slice(manifest.as_bytes());
        for p in &self.params {
            for &v in p.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<NetworkWeights> {
        let bytes = fs::read(path)?;
        let fail = |msg: &str| Error::format(format!("{}: {msg}", path.display()));
        if bytes.len() < 9 || &bytes[0..4] != WEIGHT_MAGIC {
            return Err(fail("not a weight file (bad magic)"));
        }
        if bytes[4] != WEIGHT_VERSION {
            return Err(fail(&format!("unsupported version {}", bytes[4])));
        }
        let mlen = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        if bytes.len() < 9 + mlen {
            return Err(fail("truncated manifest"));
        }
        let manifest = std::str::from_utf8(&bytes[9..9 + mlen])
            .map_err(|_| fail("manifest is not UTF-8"))?;
        let mut lines = manifest.lines();
        let arch_line = lines.next().ok_or_else(|| fail("empty manifest"))?;
        let arch = parse_arch_line(arch_line)
            .ok_or_else(|| fail(&format!("bad arch line {arch_line:?}")))?;
        arch.validate().map_err(|e| fail(&format!("arch rejected: {e}")))?;
        let specs = arch.param_specs();
        let mut declared = Vec::new();
        for line in lines {
            let mut it = line.split_whitespace();
            let name = match it.next() {
                Some(n) => n.to_string(),
                None => continue,
            };
            let mut shape = Vec::new();
            for tok in it {
                shape.push(
                    tok.parse::<usize>().map_err(|_| fail(&format!("bad extent in {line:?}")))?,
                );
            }
            declared.push(ParamSpec { name, shape });
        }
        if declared != specs {
            return Err(fail("manifest does not match the declared architecture"));
        }
        let total: usize = specs.iter().map(|s| s.shape.iter().product::<usize>()).sum();
        let payload = &bytes[9 + mlen..];
        if payload.len() != total * 8 {
            return Err(fail(&format!(
                "payload holds {} bytes, expected {}",
                payload.len(),
                total * 8
            )));
        }
        let mut params = Vec::with_capacity(specs.len());
        let mut off = 0usize;
        for spec in &specs {
            let n: usize = spec.shape.iter().product();
            let data: Vec<f64> = (0..n)
                .map(|i| {
                    f64::from_le_bytes(payload[off + 8 * i..off + 8 * i + 8].try_into().unwrap())
                })
                .collect();
            off += 8 * n;
            let t = Tensor::from_vec(&spec.shape, data)?;
            if !t.is_finite() {
                return Err(fail(&format!("non-finite values in {}", spec.name)));
            }
            params.push(t);
        }
        Ok(NetworkWeights { arch, params })
    }
}

/// Forward recording with the weight and input leaves exposed for vjp calls.
pub struct NetRecording {
    pub tape: Tape,
    pub param_ids: Vec<NodeId>,
    pub x_id: NodeId,
    pub out_id: NodeId,
}

fn parse_arch_line(line: &str) -> Option<ArchConfig> {
    let mut it = line.split_whitespace();
    if it.next()? != "arch" {
        return None;
    }
    let mut vals = [None::<usize>; 4];
    let keys = ["scales", "blocks", "channels", "kernel"];
    for tok in it {
        let (k, v) = tok.split_once('=')?;
        let i = keys.iter().position(|&key| key == k)?;
        vals[i] = Some(v.parse().ok()?);
    }
    Some(ArchConfig {
        num_scales: vals[0]?,
        blocks_per_scale: vals[1]?,
        base_channels: vals[2]?,
        kernel_size: vals[3]?,
    })
}
