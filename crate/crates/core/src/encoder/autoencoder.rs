use rand::Rng;

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::init;
use crate::tensor::{Module, Tape, Tensor, Var};

/// Per-frame linear compressor `C_T → C_S → C_T` sitting on the teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoEncoder {
    enc_weight: Tensor,
    enc_bias: Tensor,
    dec_weight: Tensor,
    dec_bias: Tensor,
}

impl AutoEncoder {
    pub fn new<R: Rng + ?Sized>(teacher_channels: usize, student_channels: usize, rng: &mut R) -> Result<Self> {
        let (ct, cs) = (teacher_channels, student_channels);
        let enc = init::lecun_uniform(rng, ct, cs * ct);
        let dec = init::lecun_uniform(rng, cs, ct * cs);
        Self::from_parts(
            Tensor::param(vec![cs, ct], enc)?,
            Tensor::param(vec![cs], vec![0.0; cs])?,
            Tensor::param(vec![ct, cs], dec)?,
            Tensor::param(vec![ct], vec![0.0; ct])?,
        )
    }

    pub fn from_parts(enc_weight: Tensor, enc_bias: Tensor, dec_weight: Tensor, dec_bias: Tensor) -> Result<Self> {
        let (cs, ct) = match enc_weight.shape() {
            &[cs, ct] => (cs, ct),
            s => {
                return Err(Error::ShapeMismatch {
                    op: "AutoEncoder",
                    expected: vec![0, 0],
                    got: s.to_vec(),
                })
            }
        };
        if cs >= ct {
            return Err(Error::invalid(format!(
                "auto-encoder bottleneck must be narrower than its input ({cs} >= {ct})"
            )));
        }
        for (t, want) in [
            (&enc_bias, vec![cs]),
            (&dec_weight, vec![ct, cs]),
            (&dec_bias, vec![ct]),
        ] {
            if t.shape() != want.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "AutoEncoder",
                    expected: want,
                    got: t.shape().to_vec(),
                });
            }
        }
        Ok(Self {
            enc_weight,
            enc_bias,
            dec_weight,
            dec_bias,
        })
    }

    pub fn teacher_channels(&self) -> usize {
        self.enc_weight.shape()[1]
    }

    pub fn student_channels(&self) -> usize {
        self.enc_weight.shape()[0]
    }

    pub fn dec_weight(&self) -> &Tensor {
        &self.dec_weight
    }

    pub fn enc_weight(&self) -> &Tensor {
        &self.enc_weight
    }

    /// `z_t: C_T×T` → (`z_r: C_S×T`, `z_hat: C_T×T`).
    pub fn forward<'a>(&self, tape: &mut Tape<'a>, vars: &[Var], z_t: Var) -> Result<(Var, Var)> {
        let c = tape.shape(z_t)[0];
        if c != self.teacher_channels() {
            return Err(Error::ShapeMismatch {
                op: "autoencode",
                expected: vec![self.teacher_channels()],
                got: vec![c],
            });
        }
        let z = tape.matmul(vars[0], z_t)?;
        let z_r = tape.add_bias(z, vars[1])?;
        let y = tape.matmul(vars[2], z_r)?;
        let z_hat = tape.add_bias(y, vars[3])?;
        Ok((z_r, z_hat))
    }

    pub fn autoencode(&self, z_t: &FeatureMap) -> Result<(FeatureMap, FeatureMap)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let x = tape.constant(z_t.shape(), z_t.values().to_vec())?;
        let (r, h) = self.forward(&mut tape, &vars, x)?;
        let t = z_t.frames();
        let rate = z_t.frame_rate_hz();
        Ok((
            FeatureMap::new(self.student_channels(), t, tape.value(r).to_vec(), rate)?,
            FeatureMap::new(self.teacher_channels(), t, tape.value(h).to_vec(), rate)?,
        ))
    }
}

impl Module for AutoEncoder {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("enc.weight".into(), &self.enc_weight),
            ("enc.bias".into(), &self.enc_bias),
            ("dec.weight".into(), &self.dec_weight),
            ("dec.bias".into(), &self.dec_bias),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.enc_weight,
            &mut self.enc_bias,
            &mut self.dec_weight,
            &mut self.dec_bias,
        ]
    }
}
