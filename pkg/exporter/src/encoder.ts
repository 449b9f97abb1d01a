/**
 * Feature encoders. The default "pixel-proj-512" encoder is a deterministic
 * offline stand-in with the same 512-wide interface as the CLIP ViT-B/16
 * image tower: bilinear 16x16 RGB downsample, mean removal, a fixed seeded
 * projection to 512 dimensions, unit normalization. The CLIP identifiers are
 * reserved and require a weights path to be supplied.
 *
 * Text anchors come from the paired text side of the same encoder family:
 * for the offline encoder, a unit vector seeded by the prompt string, using
 * the fixed template "a photo of a {class}".
 */

import { createHash } from 'node:crypto'
import { RgbImage, resize } from './image'

export interface FeatureEncoder {
  name: string
  dim: number
  encodeImage(img: RgbImage): Float64Array
  encodeText(className: string): Float64Array
}

/** xorshift128+ seeded from a hash; deterministic across platforms. */
class SeededRng {
  private s0: bigint
  private s1: bigint

  constructor(seedBytes: Buffer) {
    this.s0 = seedBytes.readBigUInt64LE(0) | 1n
    this.s1 = seedBytes.readBigUInt64LE(8) | 1n
  }

  next(): number {
    let x = this.s0
    const y = this.s1
    this.s0 = y
    x ^= (x << 23n) & 0xffffffffffffffffn
    x ^= x >> 17n
    x ^= y ^ (y >> 26n)
    this.s1 = x
    const sum = (x + y) & 0xffffffffffffffffn
    return Number(sum >> 11n) / 2 ** 53
  }

  gaussian(): number {
    // Box-Muller; the second draw is discarded for simplicity
    let u = 0
    while (u === 0) u = this.next()
    return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * this.next())
  }
}

function hashSeed(...parts: string[]): Buffer {
  const h = createHash('sha256')
  for (const p of parts) h.update(p, 'utf-8')
  return h.digest()
}

function unitNormalize(v: Float64Array): Float64Array {
  let norm = 0
  for (const x of v) norm += x * x
  norm = Math.sqrt(norm)
  if (norm === 0) throw new Error('cannot normalize a zero embedding')
  for (let i = 0; i < v.length; i++) v[i] /= norm
  return v
}

const PATCH = 16
const PROMPT_TEMPLATE = (name: string) => `a photo of a ${name}`

class PixelProjEncoder implements FeatureEncoder {
  readonly name: string
  readonly dim: number
  private readonly projection: Float64Array

  constructor(name: string, dim: number) {
    this.name = name
    this.dim = dim
    const input = PATCH * PATCH * 3
    this.projection = new Float64Array(dim * input)
    const rng = new SeededRng(hashSeed('image-projection', name))
    const scale = 1 / Math.sqrt(input)
    for (let i = 0; i < this.projection.length; i++) {
      this.projection[i] = scale * rng.gaussian()
    }
  }

  encodeImage(img: RgbImage): Float64Array {
    const patch = resize(img, PATCH)
    let mean = 0
    for (const v of patch) mean += v
    mean /= patch.length
    const input = patch.length
    const out = new Float64Array(this.dim)
    for (let r = 0; r < this.dim; r++) {
      let acc = 0
      const base = r * input
      for (let i = 0; i < input; i++) {
        acc += this.projection[base + i] * (patch[i] - mean)
      }
      // constant offset keeps near-uniform images from collapsing to zero
      out[r] = acc + this.projection[base] * 0.05
    }
    return unitNormalize(out)
  }

  encodeText(className: string): Float64Array {
    const rng = new SeededRng(hashSeed('text-anchor', this.name, PROMPT_TEMPLATE(className)))
    const out = new Float64Array(this.dim)
    for (let i = 0; i < this.dim; i++) out[i] = rng.gaussian()
    return unitNormalize(out)
  }
}

export function createEncoder(model: string): FeatureEncoder {
  if (model === 'pixel-proj-512') {
    return new PixelProjEncoder(model, 512)
  }
  if (model === 'clip-vit-b16') {
    const weights = process.env.CLIP_WEIGHTS
    if (!weights) {
      throw new Error(
        'clip-vit-b16 requires pretrained weights; set CLIP_WEIGHTS to the ' +
          'weights path or use the offline pixel-proj-512 encoder'
      )
    }
    throw new Error(`loading CLIP weights from ${weights} is not implemented in this build`)
  }
  throw new Error(`unknown model ${model}; available: pixel-proj-512, clip-vit-b16`)
}
