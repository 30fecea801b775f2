/**
 * Session flow driver: walks samples in order (familiarization first), submits
 * annotations, requests refinement, records ratings, and summarizes the
 * exported analysis rows.
 */

import type { AnnotationApi, RatingConfig, SessionExport } from './api.js'
import type { Region } from './regions.js'

export interface SampleStep {
  sampleId: string
  index: number
  familiarization: boolean
  regions: Region[]
  refinedUrl: string
  mos: number
}

export interface ScriptedItem {
  regions: Region[]
  mos: number
  config?: RatingConfig
}

/** Arithmetic mean of the MOS values in exported analysis rows. */
export function mosMeanFromRows(
  rows: SessionExport['rows'],
  config: RatingConfig,
): number | null {
  const values: number[] = []
  for (const row of rows) {
    const mos = row.ratings[config]
    if (mos !== undefined) values.push(mos)
  }
  if (values.length === 0) return null
  return values.reduce((a, b) => a + b, 0) / values.length
}

export class SessionRunner {
  readonly steps: SampleStep[] = []

  constructor(
    private readonly api: AnnotationApi,
    private readonly sessionId: string,
  ) {}

  /** Annotate, refine, and rate the next pending sample. Returns null when done. */
  async step(
    regions: Region[],
    mos: number,
    config: RatingConfig = 'refine',
  ): Promise<SampleStep | null> {
    const next = await this.api.nextSample(this.sessionId)
    if (next.done || next.sample_id === undefined) return null
    const sampleId = next.sample_id
    await this.api.submitAnnotation(sampleId, this.sessionId, regions)
    const refined = await this.api.refine(sampleId, this.sessionId)
    await this.api.rate(sampleId, this.sessionId, config, mos)
    const step: SampleStep = {
      sampleId,
      index: next.index ?? this.steps.length,
      familiarization: next.familiarization ?? false,
      regions,
      refinedUrl: refined.audio_url,
      mos,
    }
    this.steps.push(step)
    return step
  }

  /** Drive a whole session from a script; returns the server export. */
  async runScripted(items: ScriptedItem[]): Promise<SessionExport> {
    for (const item of items) {
      const step = await this.step(item.regions, item.mos, item.config ?? 'refine')
      if (step === null) break
    }
    return this.api.exportSession(this.sessionId)
  }
}

export async function startSession(
  api: AnnotationApi,
  annotatorId: string,
  options: { sampleIds?: string[]; sampleCount?: number; familiarizationCount?: number } = {},
): Promise<SessionRunner> {
  const info = await api.createSession(annotatorId, options)
  return new SessionRunner(api, info.session_id)
}
