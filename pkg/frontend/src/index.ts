export { ConvFeatureEncoder, ModelError, availableModels, resolveModel } from './encoder'
export type { ConvLayerSpec, EncoderSpec } from './encoder'
export { decodeUlmf, encodeUlmf, UlmfFormatError, ULMF_MAGIC, ULMF_VERSION } from './ulmf'
export type { FeatureMatrix } from './ulmf'
export { decodeWav, encodeWav, readWav, WavFormatError, REQUIRED_SAMPLE_RATE } from './wav'
export type { WavAudio } from './wav'
export { exportFeatures, main, parseArgs, UsageError } from './cli'
export type { ExportJob } from './cli'
