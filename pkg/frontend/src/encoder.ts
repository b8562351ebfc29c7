/**
 * Strided convolutional frame encoders.
 *
 * The built-in models reproduce the stride geometry used by speech
 * self-supervised front ends (seven conv layers, cumulative stride 320
 * at 16 kHz, i.e. one frame per 20 ms) with deterministic seeded
 * weights. They stand in for pretrained checkpoints, which cannot be
 * fetched here; a real encoder drops in by registering a new model that
 * satisfies the same interface, and everything downstream only sees the
 * ULMF file anyway.
 */

export interface ConvLayerSpec {
  kernel: number
  stride: number
}

export interface EncoderSpec {
  id: string
  channels: number
  seed: number
  layers: ConvLayerSpec[]
}

export class ModelError extends Error {}

/** wav2vec-style stack: receptive field 400 samples, total stride 320 */
const SSL_GEOMETRY: ConvLayerSpec[] = [
  { kernel: 10, stride: 5 },
  { kernel: 3, stride: 2 },
  { kernel: 3, stride: 2 },
  { kernel: 3, stride: 2 },
  { kernel: 3, stride: 2 },
  { kernel: 2, stride: 2 },
  { kernel: 2, stride: 2 },
]

const REGISTRY: Record<string, EncoderSpec> = {
  'tiny-conv-v1': { id: 'tiny-conv-v1', channels: 32, seed: 0x5eed, layers: SSL_GEOMETRY },
  'base-conv-v1': { id: 'base-conv-v1', channels: 64, seed: 0xb0de, layers: SSL_GEOMETRY },
}

export function availableModels(): string[] {
  return Object.keys(REGISTRY)
}

export function resolveModel(id: string): EncoderSpec {
  const spec = REGISTRY[id]
  if (spec === undefined) {
    throw new ModelError(`model unavailable: ${id} (known: ${availableModels().join(', ')})`)
  }
  return spec
}

/** Deterministic 32-bit PRNG so weights are identical on every run. */
function mulberry32(seed: number): () => number {
  let state = seed >>> 0
  return () => {
    state = (state + 0x6d2b79f5) >>> 0
    let z = state
    z = Math.imul(z ^ (z >>> 15), z | 1)
    z ^= z + Math.imul(z ^ (z >>> 7), z | 61)
    return ((z ^ (z >>> 14)) >>> 0) / 4294967296
  }
}

interface ConvLayer {
  spec: ConvLayerSpec
  inChannels: number
  outChannels: number
  /** weight[out][inCh * kernel + tap] */
  weight: Float64Array[]
}

export class ConvFeatureEncoder {
  readonly spec: EncoderSpec
  private readonly convLayers: ConvLayer[]

  constructor(spec: EncoderSpec) {
    this.spec = spec
    const rand = mulberry32(spec.seed)
    this.convLayers = spec.layers.map((layerSpec, index) => {
      const inChannels = index === 0 ? 1 : spec.channels
      const fanIn = inChannels * layerSpec.kernel
      const scale = 1 / Math.sqrt(fanIn)
      const weight: Float64Array[] = []
      for (let out = 0; out < spec.channels; out++) {
        const row = new Float64Array(fanIn)
        for (let i = 0; i < fanIn; i++) {
          row[i] = (rand() * 2 - 1) * scale
        }
        weight.push(row)
      }
      return { spec: layerSpec, inChannels, outChannels: spec.channels, weight }
    })
  }

  get nLayers(): number {
    return this.convLayers.length
  }

  /** cumulative stride in samples after `layer` layers (1-based) */
  strideAfter(layer: number): number {
    this.checkLayer(layer)
    return this.convLayers.slice(0, layer).reduce((acc, l) => acc * l.spec.stride, 1)
  }

  frameRateAfter(layer: number, sampleRate: number): number {
    return sampleRate / this.strideAfter(layer)
  }

  outputFrames(layer: number, nSamples: number): number {
    this.checkLayer(layer)
    let length = nSamples
    for (const { spec } of this.convLayers.slice(0, layer)) {
      length = Math.floor((length - spec.kernel) / spec.stride) + 1
    }
    return length
  }

  /**
   * Run the stack and return the requested layer's output as frames of
   * `channels` values each (tanh after every conv).
   */
  encode(samples: Float64Array, layer: number): Float32Array[] {
    this.checkLayer(layer)
    let current: Float64Array[] = [samples] // [channel][time]
    for (let li = 0; li < layer; li++) {
      current = this.applyLayer(this.convLayers[li], current)
      if (current[0].length === 0) {
        throw new ModelError(
          `audio too short: no frames left after layer ${li + 1}`,
        )
      }
    }
    const frames: Float32Array[] = []
    const t = current[0].length
    for (let i = 0; i < t; i++) {
      const frame = new Float32Array(current.length)
      for (let ch = 0; ch < current.length; ch++) {
        frame[ch] = current[ch][i]
      }
      frames.push(frame)
    }
    return frames
  }

  private applyLayer(layer: ConvLayer, input: Float64Array[]): Float64Array[] {
    const { kernel, stride } = layer.spec
    const inLength = input[0].length
    const outLength = Math.max(0, Math.floor((inLength - kernel) / stride) + 1)
    const output: Float64Array[] = []
    for (let out = 0; out < layer.outChannels; out++) {
      const row = layer.weight[out]
      const series = new Float64Array(outLength)
      for (let t = 0; t < outLength; t++) {
        const base = t * stride
        let acc = 0
        for (let ch = 0; ch < layer.inChannels; ch++) {
          const channel = input[ch]
          const offset = ch * kernel
          for (let tap = 0; tap < kernel; tap++) {
            acc += row[offset + tap] * channel[base + tap]
          }
        }
        series[t] = Math.tanh(acc)
      }
      output.push(series)
    }
    return output
  }

  private checkLayer(layer: number): void {
    if (!Number.isInteger(layer) || layer < 1 || layer > this.convLayers.length) {
      throw new ModelError(
        `layer index ${layer} invalid for ${this.spec.id} (1..${this.convLayers.length})`,
      )
    }
  }
}
