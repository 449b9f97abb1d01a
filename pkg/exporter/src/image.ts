/**
 * Minimal image decoding: binary PPM/PGM and non-interlaced 8-bit PNG
 * (grayscale, RGB, RGBA). Returns planar RGB floats in [0, 1].
 */

import * as zlib from 'node:zlib'

export interface RgbImage {
  width: number
  height: number
  /** row-major, 3 floats per pixel */
  pixels: Float64Array
}

export function decodeImage(buf: Buffer): RgbImage {
  if (buf.length >= 8 && buf.readUInt32BE(0) === 0x89504e47) {
    return decodePng(buf)
  }
  const tag = buf.subarray(0, 2).toString('ascii')
  if (tag === 'P6' || tag === 'P5') {
    return decodePnm(buf)
  }
  throw new Error('unsupported image format')
}

function decodePnm(buf: Buffer): RgbImage {
  // header tokens separated by whitespace; '#' comments allowed
  let pos = 0
  const tokens: string[] = []
  while (tokens.length < 4) {
    while (pos < buf.length && /\s/.test(String.fromCharCode(buf[pos]))) pos++
    if (pos < buf.length && buf[pos] === 0x23) {
      while (pos < buf.length && buf[pos] !== 0x0a) pos++
      continue
    }
    let start = pos
    while (pos < buf.length && !/\s/.test(String.fromCharCode(buf[pos]))) pos++
    if (start === pos) throw new Error('malformed PNM header')
    tokens.push(buf.subarray(start, pos).toString('ascii'))
  }
  pos++ // single whitespace after maxval
  const [magic, w, h, maxval] = [tokens[0], +tokens[1], +tokens[2], +tokens[3]]
  if (!Number.isFinite(w) || !Number.isFinite(h) || w <= 0 || h <= 0) {
    throw new Error('bad PNM dimensions')
  }
  if (maxval !== 255) throw new Error(`unsupported PNM maxval ${maxval}`)
  const channels = magic === 'P6' ? 3 : 1
  const need = w * h * channels
  if (buf.length - pos < need) throw new Error('truncated PNM payload')
  const pixels = new Float64Array(w * h * 3)
  for (let i = 0; i < w * h; i++) {
    for (let c = 0; c < 3; c++) {
      const src = channels === 3 ? pos + 3 * i + c : pos + i
      pixels[3 * i + c] = buf[src] / 255
    }
  }
  return { width: w, height: h, pixels }
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c
  const pa = Math.abs(p - a)
  const pb = Math.abs(p - b)
  const pc = Math.abs(p - c)
  if (pa <= pb && pa <= pc) return a
  return pb <= pc ? b : c
}

function decodePng(buf: Buffer): RgbImage {
  let off = 8
  let width = 0
  let height = 0
  let bitDepth = 0
  let colorType = 0
  const idat: Buffer[] = []
  while (off + 8 <= buf.length) {
    const len = buf.readUInt32BE(off)
    const type = buf.subarray(off + 4, off + 8).toString('ascii')
    const data = buf.subarray(off + 8, off + 8 + len)
    if (data.length < len) throw new Error('truncated PNG chunk')
    if (type === 'IHDR') {
      width = data.readUInt32BE(0)
      height = data.readUInt32BE(4)
      bitDepth = data[8]
      colorType = data[9]
      if (data[12] !== 0) throw new Error('interlaced PNG unsupported')
    } else if (type === 'IDAT') {
      idat.push(data)
    } else if (type === 'IEND') {
      break
    }
    off += 12 + len
  }
  if (!width || !height) throw new Error('missing IHDR')
  if (bitDepth !== 8) throw new Error(`unsupported PNG bit depth ${bitDepth}`)
  const channels = { 0: 1, 2: 3, 4: 2, 6: 4 }[colorType as 0 | 2 | 4 | 6]
  if (!channels) throw new Error(`unsupported PNG color type ${colorType}`)

  const raw = zlib.inflateSync(Buffer.concat(idat))
  const stride = width * channels
  if (raw.length < height * (stride + 1)) throw new Error('truncated PNG payload')

  const out = Buffer.alloc(height * stride)
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)]
    const row = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1))
    const prev = y > 0 ? out.subarray((y - 1) * stride, y * stride) : null
    const cur = out.subarray(y * stride, (y + 1) * stride)
    for (let x = 0; x < stride; x++) {
      const a = x >= channels ? cur[x - channels] : 0
      const b = prev ? prev[x] : 0
      const c = prev && x >= channels ? prev[x - channels] : 0
      let v = row[x]
      if (filter === 1) v += a
      else if (filter === 2) v += b
      else if (filter === 3) v += (a + b) >> 1
      else if (filter === 4) v += paeth(a, b, c)
      else if (filter !== 0) throw new Error(`unknown PNG filter ${filter}`)
      cur[x] = v & 0xff
    }
  }

  const pixels = new Float64Array(width * height * 3)
  for (let i = 0; i < width * height; i++) {
    if (channels >= 3) {
      pixels[3 * i] = out[channels * i] / 255
      pixels[3 * i + 1] = out[channels * i + 1] / 255
      pixels[3 * i + 2] = out[channels * i + 2] / 255
    } else {
      const g = out[channels * i] / 255
      pixels[3 * i] = pixels[3 * i + 1] = pixels[3 * i + 2] = g
    }
  }
  return { width, height, pixels }
}

/** Bilinear resample to size x size, preserving the three channels. */
export function resize(img: RgbImage, size: number): Float64Array {
  const out = new Float64Array(size * size * 3)
  const sx = img.width / size
  const sy = img.height / size
  for (let y = 0; y < size; y++) {
    const fy = Math.min((y + 0.5) * sy - 0.5, img.height - 1)
    const y0 = Math.max(Math.floor(fy), 0)
    const y1 = Math.min(y0 + 1, img.height - 1)
    const wy = fy - y0
    for (let x = 0; x < size; x++) {
      const fx = Math.min((x + 0.5) * sx - 0.5, img.width - 1)
      const x0 = Math.max(Math.floor(fx), 0)
      const x1 = Math.min(x0 + 1, img.width - 1)
      const wx = fx - x0
      for (let c = 0; c < 3; c++) {
        const p00 = img.pixels[3 * (y0 * img.width + x0) + c]
        const p01 = img.pixels[3 * (y0 * img.width + x1) + c]
        const p10 = img.pixels[3 * (y1 * img.width + x0) + c]
        const p11 = img.pixels[3 * (y1 * img.width + x1) + c]
        out[3 * (y * size + x) + c] =
          (1 - wy) * ((1 - wx) * p00 + wx * p01) + wy * ((1 - wx) * p10 + wx * p11)
      }
    }
  }
  return out
}
