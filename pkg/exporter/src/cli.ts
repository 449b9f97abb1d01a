/**
 * CLI: export --images DIR --split {train|test} --out FILE --anchors FILE
 *             --model NAME [--batch-size N] [--device HINT]
 *
 * The split flag only labels the log line; the directory tree passed via
 * --images is exported as-is, so train and test trees are separate exports.
 */

import { createEncoder } from './encoder'
import { ExportManifest, exportFeatures } from './export'

function parseArgs(argv: string[]): { split: string; manifest: ExportManifest } {
  if (argv[0] !== 'export') {
    throw new Error('usage: export --images DIR --split {train|test} --out FILE [--anchors FILE] [--model NAME]')
  }
  const opts = new Map<string, string>()
  for (let i = 1; i < argv.length; i += 2) {
    const key = argv[i]
    const value = argv[i + 1]
    if (!key.startsWith('--') || value === undefined) {
      throw new Error(`malformed argument near ${key}`)
    }
    opts.set(key.slice(2), value)
  }
  const need = (k: string): string => {
    const v = opts.get(k)
    if (!v) throw new Error(`missing required --${k}`)
    return v
  }
  const split = opts.get('split') ?? 'train'
  if (split !== 'train' && split !== 'test') {
    throw new Error(`--split must be train or test, got ${split}`)
  }
  return {
    split,
    manifest: {
      imagesDir: need('images'),
      outFile: need('out'),
      anchorsFile: opts.get('anchors'),
      model: opts.get('model') ?? 'pixel-proj-512',
      batchSize: opts.has('batch-size') ? Number(opts.get('batch-size')) : undefined,
      deviceHint: opts.get('device'),
    },
  }
}

export function main(argv: string[]): number {
  let parsed
  try {
    parsed = parseArgs(argv)
  } catch (err) {
    console.error(`argument error: ${(err as Error).message}`)
    return 2
  }
  try {
    const encoder = createEncoder(parsed.manifest.model)
    const report = exportFeatures(parsed.manifest, encoder)
    const skipped = report.totalSkipped > 0 ? `, ${report.totalSkipped} skipped` : ''
    console.log(
      `exported ${report.totalRecords} ${parsed.split} records across ` +
        `${report.classes.length} classes to ${parsed.manifest.outFile}${skipped}`
    )
    return 0
  } catch (err) {
    console.error(`export failed: ${(err as Error).message}`)
    return 1
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)))
}
