/**
 * Directory-tree export: one class per subdirectory, ids assigned by
 * lexicographic subdirectory order, one feature record per decodable image.
 * Output goes to the FCIL binary format plus a unit-norm anchor table.
 */

import * as fs from 'node:fs'
import * as path from 'node:path'
import { FeatureEncoder } from './encoder'
import { FeatureRecord, encodeFeatureFile } from './fcil'
import { decodeImage } from './image'

export interface ExportManifest {
  imagesDir: string
  outFile: string
  anchorsFile?: string
  model: string
  batchSize?: number
  deviceHint?: string
}

export interface ExportReport {
  classes: { id: number; name: string; exported: number; skipped: number }[]
  totalRecords: number
  totalSkipped: number
}

export function listClassDirs(imagesDir: string): { id: number; name: string; dir: string }[] {
  const entries = fs
    .readdirSync(imagesDir, { withFileTypes: true })
    .filter((e) => e.isDirectory())
    .map((e) => e.name)
    .sort()
  if (entries.length === 0) {
    throw new Error(`no class subdirectories under ${imagesDir}`)
  }
  return entries.map((name, id) => ({ id, name, dir: path.join(imagesDir, name) }))
}

export function exportFeatures(
  manifest: ExportManifest,
  encoder: FeatureEncoder,
  log: (msg: string) => void = console.error
): ExportReport {
  const classes = listClassDirs(manifest.imagesDir)
  const records: FeatureRecord[] = []
  const names = new Map<number, string>()
  const report: ExportReport = { classes: [], totalRecords: 0, totalSkipped: 0 }

  for (const cls of classes) {
    const files = fs
      .readdirSync(cls.dir, { withFileTypes: true })
      .filter((e) => e.isFile())
      .map((e) => e.name)
      .sort()
    let exported = 0
    let skipped = 0
    for (const file of files) {
      const full = path.join(cls.dir, file)
      let features: Float64Array
      try {
        features = encoder.encodeImage(decodeImage(fs.readFileSync(full)))
      } catch (err) {
        skipped++
        log(`warning: skipping undecodable image ${full}: ${(err as Error).message}`)
        continue
      }
      records.push({ classId: cls.id, features: Float32Array.from(features) })
      exported++
    }
    if (exported === 0) {
      throw new Error(`class ${cls.name} has no usable images`)
    }
    names.set(cls.id, cls.name)
    report.classes.push({ id: cls.id, name: cls.name, exported, skipped })
    report.totalRecords += exported
    report.totalSkipped += skipped
  }

  writeAtomic(manifest.outFile, encodeFeatureFile({ d: encoder.dim, records, classNames: names }))

  if (manifest.anchorsFile) {
    const anchorRecords: FeatureRecord[] = classes.map((cls) => ({
      classId: cls.id,
      features: quantizedUnit(encoder.encodeText(cls.name)),
    }))
    writeAtomic(
      manifest.anchorsFile,
      encodeFeatureFile({ d: encoder.dim, records: anchorRecords, classNames: names })
    )
  }
  return report
}

/** Renormalize after float32 quantization so stored rows stay unit-norm. */
function quantizedUnit(v: Float64Array): Float32Array {
  let q = Float32Array.from(v)
  let norm = 0
  for (const x of q) norm += x * x
  norm = Math.sqrt(norm)
  q = Float32Array.from(q, (x) => x / norm)
  return q
}

function writeAtomic(target: string, data: Buffer): void {
  fs.mkdirSync(path.dirname(path.resolve(target)), { recursive: true })
  const tmp = `${target}.tmp.${process.pid}`
  fs.writeFileSync(tmp, data)
  fs.renameSync(tmp, target)
}
