#!/usr/bin/env node
/**
 * Feature bridge CLI.
 *
 *   export --model <id> --layer <n> --out <dir> <wavs...>
 *
 * Writes one ULMF file per wav (same stem, .ulmf extension); the header
 * records the layer's stride-derived frame rate and a source tag of the
 * form "<model>:layer<n>". Exit codes: 0 ok, 1 runtime error, 2 usage.
 */

import { mkdirSync, writeFileSync } from 'fs'
import { basename, join } from 'path'

import { ConvFeatureEncoder, ModelError, availableModels, resolveModel } from './encoder'
import { encodeUlmf } from './ulmf'
import { REQUIRED_SAMPLE_RATE, WavFormatError, readWav } from './wav'

export interface ExportJob {
  model: string
  layer: number
  outDir: string
  wavs: string[]
}

export class UsageError extends Error {}

export function parseArgs(argv: string[]): ExportJob {
  if (argv.length === 0 || argv[0] !== 'export') {
    throw new UsageError(
      `usage: export --model <id> --layer <n> --out <dir> <wavs...>\n` +
      `models: ${availableModels().join(', ')}`,
    )
  }
  let model: string | undefined
  let layer: number | undefined
  let outDir: string | undefined
  const wavs: string[] = []
  for (let i = 1; i < argv.length; i++) {
    const arg = argv[i]
    const next = () => {
      i += 1
      if (i >= argv.length) {
        throw new UsageError(`flag ${arg} needs a value`)
      }
      return argv[i]
    }
    if (arg === '--model') {
      model = next()
    } else if (arg === '--layer') {
      const raw = next()
      layer = Number(raw)
      if (!Number.isInteger(layer)) {
        throw new UsageError(`--layer must be an integer, got ${raw}`)
      }
    } else if (arg === '--out') {
      outDir = next()
    } else if (arg.startsWith('--')) {
      throw new UsageError(`unknown flag ${arg}`)
    } else {
      wavs.push(arg)
    }
  }
  if (model === undefined) throw new UsageError('--model is required')
  if (layer === undefined) throw new UsageError('--layer is required')
  if (outDir === undefined) throw new UsageError('--out is required')
  if (wavs.length === 0) throw new UsageError('no input wav files given')
  return { model, layer, outDir, wavs }
}

export function exportFeatures(job: ExportJob, log: (line: string) => void = () => {}): string[] {
  const encoder = new ConvFeatureEncoder(resolveModel(job.model))
  const frameRate = encoder.frameRateAfter(job.layer, REQUIRED_SAMPLE_RATE)
  mkdirSync(job.outDir, { recursive: true })
  const written: string[] = []
  for (const wavPath of job.wavs) {
    const audio = readWav(wavPath)
    const frames = encoder.encode(audio.samples, job.layer)
    const target = join(job.outDir, basename(wavPath).replace(/\.wav$/i, '') + '.ulmf')
    writeFileSync(target, encodeUlmf({
      frames,
      frameRate,
      sourceTag: `${job.model}:layer${job.layer}`,
    }))
    written.push(target)
    log(`${wavPath} -> ${target} (${frames.length} x ${frames[0].length} @ ${frameRate} Hz)`)
  }
  return written
}

export function main(argv: string[]): number {
  try {
    const job = parseArgs(argv)
    exportFeatures(job, (line) => process.stdout.write(line + '\n'))
    return 0
  } catch (err) {
    if (err instanceof UsageError) {
      process.stderr.write(`usage error: ${err.message}\n`)
      return 2
    }
    if (err instanceof ModelError || err instanceof WavFormatError) {
      process.stderr.write(`error: ${err.message}\n`)
      return 1
    }
    if (err instanceof Error && 'code' in err && err.code === 'ENOENT') {
      process.stderr.write(`error: ${err.message}\n`)
      return 1
    }
    throw err
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)))
}
