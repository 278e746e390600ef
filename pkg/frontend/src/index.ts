/**
 * Bindings for the viewlift core, for use from external training loops.
 *
 * The boundary is deliberately language-neutral: JSON/JSONL strings for
 * manifests, plans, and results, plus raw little-endian float32 buffers for
 * embeddings.  Every call shells out to the core CLI with per-call temporary
 * directories, so results are byte-identical to direct CLI invocations,
 * calls are reentrant, and no state leaks between sessions.
 */

import { execFileSync } from 'node:child_process'
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from 'node:fs'
import { tmpdir } from 'node:os'
import { join } from 'node:path'

/** Error raised when the core rejects a call; `category` is the core's
 * machine-readable error class name. */
export class CoreError extends Error {
  readonly category: string

  constructor(category: string, message: string) {
    super(message)
    this.name = 'CoreError'
    this.category = category
  }
}

export interface CurriculumOptions {
  warmupEpochs?: number
  deltaThetaMax?: number
}

export interface SamplerOptions {
  identitiesPerBatch?: number
  instancesPerIdentity?: number
  realPerIdentity?: number
  syntheticPerIdentity?: number
}

export interface PlanOptions {
  sampler?: SamplerOptions
  curriculum?: CurriculumOptions
  seed?: number
}

export interface EpochPlanResult {
  planJsonl: string
  stateJson: string
}

export interface EmbeddingSet {
  /** row-major float32 values, length rows * dim */
  embeddings: Float32Array
  rows: number
  dim: number
  /** one {"identity": ..., "camera": ...} JSON object per line */
  sidecarJsonl: string
}

export interface EvaluateOptions {
  metric?: 'cosine' | 'euclidean'
  maxRank?: number
}

const PYTHON = process.env.VIEWLIFT_PYTHON ?? 'python3'

function runCore(args: string[]): string {
  try {
    return execFileSync(PYTHON, ['-m', 'viewlift.cli', ...args], {
      encoding: 'utf8',
      stdio: ['ignore', 'pipe', 'pipe'],
    })
  } catch (error) {
    const err = error as { stderr?: string; message?: string }
    const stderr = err.stderr ?? ''
    const match = /error: ([A-Za-z]+): ([^\n]*)/.exec(stderr)
    if (match) {
      throw new CoreError(match[1]!, match[2]!)
    }
    throw new CoreError('RuntimeError', (stderr || err.message || 'core invocation failed').trim())
  }
}

function withTempDir<T>(body: (dir: string) => T): T {
  const dir = mkdtempSync(join(tmpdir(), 'viewlift-'))
  try {
    return body(dir)
  } finally {
    rmSync(dir, { recursive: true, force: true })
  }
}

/** Semantic version of the core backing this binding. */
export function coreVersion(): string {
  return runCore(['--version']).trim()
}

/**
 * Curriculum rejection probability for a synthetic sample.
 *
 * Bit-equal to the core: the CLI prints the double with round-trip
 * precision and Number() parses it back to the identical value.
 */
export function rejectionProb(
  deltaTheta: number,
  epoch: number,
  config: CurriculumOptions = {},
): number {
  const args = [
    'reject-prob',
    '--delta-theta', String(deltaTheta),
    '--epoch', String(epoch),
  ]
  if (config.warmupEpochs !== undefined) {
    args.push('--warmup-epochs', String(config.warmupEpochs))
  }
  if (config.deltaThetaMax !== undefined) {
    args.push('--delta-theta-max', String(config.deltaThetaMax))
  }
  return Number(runCore(args).trim())
}

function planConfigIni(options: PlanOptions): string {
  const lines: string[] = []
  const sampler = options.sampler ?? {}
  lines.push('[sampler]')
  if (sampler.identitiesPerBatch !== undefined) {
    lines.push(`identities_per_batch = ${sampler.identitiesPerBatch}`)
  }
  if (sampler.instancesPerIdentity !== undefined) {
    lines.push(`instances_per_identity = ${sampler.instancesPerIdentity}`)
  }
  if (sampler.realPerIdentity !== undefined) {
    lines.push(`real_per_identity = ${sampler.realPerIdentity}`)
  }
  if (sampler.syntheticPerIdentity !== undefined) {
    lines.push(`synthetic_per_identity = ${sampler.syntheticPerIdentity}`)
  }
  const curriculum = options.curriculum ?? {}
  lines.push('[curriculum]')
  if (curriculum.warmupEpochs !== undefined) {
    lines.push(`warmup_epochs = ${curriculum.warmupEpochs}`)
  }
  if (curriculum.deltaThetaMax !== undefined) {
    lines.push(`delta_theta_max = ${curriculum.deltaThetaMax}`)
  }
  lines.push('[pipeline]')
  if (options.seed !== undefined) {
    lines.push(`seed = ${options.seed}`)
  }
  return lines.join('\n') + '\n'
}

/**
 * Build one training-epoch plan from a JSONL manifest.
 *
 * Output JSONL/JSON strings are byte-identical to the `plan` CLI run on the
 * same inputs.  Pass the previous call's `stateJson` to keep per-identity
 * synthetic pools rolling across epochs.
 */
export function buildEpochPlan(
  manifestJsonl: string,
  options: PlanOptions,
  epoch: number,
  stateJson?: string,
): EpochPlanResult {
  return withTempDir((dir) => {
    const manifestPath = join(dir, 'manifest.jsonl')
    const configPath = join(dir, 'config.ini')
    const planPath = join(dir, 'plan.jsonl')
    const stateOutPath = join(dir, 'state_out.json')
    writeFileSync(manifestPath, manifestJsonl)
    writeFileSync(configPath, planConfigIni(options))
    const args = [
      'plan',
      '--config', configPath,
      '--manifest', manifestPath,
      '--epoch', String(epoch),
      '--out', planPath,
      '--state-out', stateOutPath,
    ]
    if (stateJson !== undefined) {
      const stateInPath = join(dir, 'state_in.json')
      writeFileSync(stateInPath, stateJson)
      args.push('--state-in', stateInPath)
    }
    runCore(args)
    return {
      planJsonl: readFileSync(planPath, 'utf8'),
      stateJson: readFileSync(stateOutPath, 'utf8'),
    }
  })
}

function writeEmbeddingContainer(dir: string, tag: string, set: EmbeddingSet): [string, string] {
  if (set.rows < 1 || set.dim < 1) {
    throw new CoreError('ValidationError', `${tag}: embedding shape must be positive`)
  }
  if (set.embeddings.length !== set.rows * set.dim) {
    throw new CoreError(
      'ValidationError',
      `${tag}: buffer length ${set.embeddings.length} != rows*dim ${set.rows * set.dim}`,
    )
  }
  const sidecarRows = set.sidecarJsonl.split('\n').filter((line) => line.trim().length > 0)
  if (sidecarRows.length !== set.rows) {
    throw new CoreError(
      'ValidationError',
      `${tag}: sidecar rows (${sidecarRows.length}) do not match embedding count (${set.rows})`,
    )
  }
  const header = Buffer.alloc(12)
  header.write('EMB1', 0, 'ascii')
  header.writeUInt32LE(set.rows, 4)
  header.writeUInt32LE(set.dim, 8)
  const payload = Buffer.alloc(set.embeddings.length * 4)
  for (let i = 0; i < set.embeddings.length; i++) {
    payload.writeFloatLE(set.embeddings[i]!, i * 4)
  }
  const embPath = join(dir, `${tag}.emb`)
  const sidecarPath = join(dir, `${tag}.jsonl`)
  writeFileSync(embPath, Buffer.concat([header, payload]))
  writeFileSync(sidecarPath, set.sidecarJsonl)
  return [embPath, sidecarPath]
}

/**
 * Cross-view retrieval evaluation (mAP / Rank-1 / CMC).
 *
 * Returns the result JSON string exactly as the core CLI writes it.
 */
export function evaluateRetrieval(
  query: EmbeddingSet,
  gallery: EmbeddingSet,
  options: EvaluateOptions = {},
): string {
  return withTempDir((dir) => {
    const [qEmb, qSidecar] = writeEmbeddingContainer(dir, 'query', query)
    const [gEmb, gSidecar] = writeEmbeddingContainer(dir, 'gallery', gallery)
    const outPath = join(dir, 'result.json')
    const args = ['evaluate', qEmb, qSidecar, gEmb, gSidecar, '--out', outPath]
    if (options.metric !== undefined || options.maxRank !== undefined) {
      const configPath = join(dir, 'metrics.ini')
      const lines = ['[metrics]']
      if (options.metric !== undefined) lines.push(`distance = ${options.metric}`)
      if (options.maxRank !== undefined) lines.push(`max_rank = ${options.maxRank}`)
      writeFileSync(configPath, lines.join('\n') + '\n')
      args.push('--config', configPath)
    }
    runCore(args)
    return readFileSync(outPath, 'utf8')
  })
}
