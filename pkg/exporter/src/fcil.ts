/**
 * The FCIL binary feature format, shared with the training engine.
 *
 * Little-endian layout: magic "FCIL", u32 version = 1, u32 d, u64 n, then n
 * records of (u32 class_id, d * f32 features), then an optional trailing
 * class-name table: u32 count, each entry (u32 class_id, u16 byteLen, UTF-8).
 */

export interface FeatureRecord {
  classId: number
  features: Float32Array
}

export interface FeatureFile {
  d: number
  records: FeatureRecord[]
  classNames?: Map<number, string>
}

const MAGIC = Buffer.from('FCIL', 'ascii')
const VERSION = 1

export function encodeFeatureFile(file: FeatureFile): Buffer {
  const { d, records, classNames } = file
  for (const rec of records) {
    if (rec.features.length !== d) {
      throw new Error(`record has ${rec.features.length} dims, header says ${d}`)
    }
  }
  const header = Buffer.alloc(4 + 4 + 8)
  header.writeUInt32LE(VERSION, 0)
  header.writeUInt32LE(d, 4)
  header.writeBigUInt64LE(BigInt(records.length), 8)

  const body = Buffer.alloc(records.length * (4 + 4 * d))
  let off = 0
  for (const rec of records) {
    body.writeUInt32LE(rec.classId >>> 0, off)
    off += 4
    for (let i = 0; i < d; i++) {
      body.writeFloatLE(rec.features[i], off)
      off += 4
    }
  }

  const parts = [MAGIC, header, body]
  if (classNames) {
    const count = Buffer.alloc(4)
    count.writeUInt32LE(classNames.size, 0)
    parts.push(count)
    for (const id of [...classNames.keys()].sort((a, b) => a - b)) {
      const encoded = Buffer.from(classNames.get(id)!, 'utf-8')
      const entry = Buffer.alloc(6)
      entry.writeUInt32LE(id >>> 0, 0)
      entry.writeUInt16LE(encoded.length, 4)
      parts.push(entry, encoded)
    }
  }
  return Buffer.concat(parts)
}

export function decodeFeatureFile(buf: Buffer): FeatureFile {
  const take = (off: number, n: number): number => {
    if (off + n > buf.length) throw new Error('truncated payload')
    return off + n
  }
  let off = take(0, 4)
  if (!buf.subarray(0, 4).equals(MAGIC)) throw new Error('bad magic')
  off = take(off, 4)
  const version = buf.readUInt32LE(4)
  if (version !== VERSION) throw new Error(`unsupported version ${version}`)
  off = take(off, 4)
  const d = buf.readUInt32LE(8)
  off = take(off, 8)
  const n = Number(buf.readBigUInt64LE(12))

  const records: FeatureRecord[] = []
  for (let k = 0; k < n; k++) {
    const next = take(off, 4 + 4 * d)
    const classId = buf.readUInt32LE(off)
    const features = new Float32Array(d)
    for (let i = 0; i < d; i++) {
      features[i] = buf.readFloatLE(off + 4 + 4 * i)
    }
    records.push({ classId, features })
    off = next
  }

  let classNames: Map<number, string> | undefined
  if (off < buf.length) {
    off = take(off, 4)
    const count = buf.readUInt32LE(off - 4)
    classNames = new Map()
    for (let k = 0; k < count; k++) {
      off = take(off, 6)
      const id = buf.readUInt32LE(off - 6)
      const len = buf.readUInt16LE(off - 2)
      off = take(off, len)
      classNames.set(id, buf.subarray(off - len, off).toString('utf-8'))
    }
  }
  if (off !== buf.length) throw new Error(`${buf.length - off} trailing bytes`)
  return { d, records, classNames }
}
