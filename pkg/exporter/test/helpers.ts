/** Test fixtures: tiny PNG/PPM writers and a deterministic toy image tree. */

import * as fs from 'node:fs'
import * as path from 'node:path'
import * as zlib from 'node:zlib'

function crc32(buf: Buffer): number {
  let crc = ~0
  for (const byte of buf) {
    crc ^= byte
    for (let k = 0; k < 8; k++) {
      crc = (crc >>> 1) ^ (0xedb88320 & -(crc & 1))
    }
  }
  return ~crc >>> 0
}

function chunk(type: string, data: Buffer): Buffer {
  const head = Buffer.alloc(4)
  head.writeUInt32LE
  head.writeUInt32BE(data.length, 0)
  const body = Buffer.concat([Buffer.from(type, 'ascii'), data])
  const crc = Buffer.alloc(4)
  crc.writeUInt32BE(crc32(body), 0)
  return Buffer.concat([head, body, crc])
}

/** Encode 8-bit RGB pixels (row-major, 3 bytes per pixel) as a PNG. */
export function encodePng(width: number, height: number, rgb: Uint8Array): Buffer {
  const ihdr = Buffer.alloc(13)
  ihdr.writeUInt32BE(width, 0)
  ihdr.writeUInt32BE(height, 4)
  ihdr[8] = 8 // bit depth
  ihdr[9] = 2 // color type RGB
  const raw = Buffer.alloc(height * (1 + 3 * width))
  for (let y = 0; y < height; y++) {
    raw[y * (1 + 3 * width)] = 0 // filter none
    for (let x = 0; x < 3 * width; x++) {
      raw[y * (1 + 3 * width) + 1 + x] = rgb[y * 3 * width + x]
    }
  }
  return Buffer.concat([
    Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]),
    chunk('IHDR', ihdr),
    chunk('IDAT', zlib.deflateSync(raw)),
    chunk('IEND', Buffer.alloc(0)),
  ])
}

export function encodePpm(width: number, height: number, rgb: Uint8Array): Buffer {
  return Buffer.concat([Buffer.from(`P6\n${width} ${height}\n255\n`, 'ascii'), Buffer.from(rgb)])
}

function mulberry32(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a = (a + 0x6d2b79f5) >>> 0
    let t = a
    t = Math.imul(t ^ (t >>> 15), t | 1)
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61)
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

/** Class-distinct striped color pattern plus per-image pixel noise. */
export function toyImage(classIdx: number, imageIdx: number, size = 32): Uint8Array {
  const rand = mulberry32(classIdx * 10007 + imageIdx * 101 + 1)
  const base = [
    (classIdx * 53) % 200 + 30,
    (classIdx * 97) % 200 + 30,
    (classIdx * 151) % 200 + 30,
  ]
  const stripe = (classIdx % 4) + 2
  const rgb = new Uint8Array(size * size * 3)
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      const on = Math.floor((classIdx % 2 === 0 ? x : y) / stripe) % 2 === 0
      for (let c = 0; c < 3; c++) {
        const v = on ? base[c] : 255 - base[c]
        const noise = Math.floor(20 * (rand() - 0.5))
        rgb[3 * (y * size + x) + c] = Math.max(0, Math.min(255, v + noise))
      }
    }
  }
  return rgb
}

export interface ToyTree {
  root: string
  classNames: string[]
}

export function writeToyTree(
  root: string,
  nClasses: number,
  perClass: number,
  offset = 0
): ToyTree {
  const classNames: string[] = []
  for (let c = 0; c < nClasses; c++) {
    const name = `class_${String(c).padStart(2, '0')}`
    classNames.push(name)
    const dir = path.join(root, name)
    fs.mkdirSync(dir, { recursive: true })
    for (let i = 0; i < perClass; i++) {
      const rgb = toyImage(c, offset + i)
      fs.writeFileSync(path.join(dir, `img_${String(i).padStart(3, '0')}.png`), encodePng(32, 32, rgb))
    }
  }
  return { root, classNames }
}
