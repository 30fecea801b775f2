/**
 * App bootstrap: one annotation screen per sample.
 *
 * Flow per sample: listen to the enrollment clip and the extractor output,
 * drag regions over the parts that still sound wrong, request refinement,
 * A/B the refined result against the extractor output, and rate it 1-5.
 */

import { AnnotationApi, NextSample, RatingConfig } from './api.js'
import { WaveformLane } from './waveform.js'

const api = new AnnotationApi('')

interface Elements {
  status: HTMLElement
  laneMixture: HTMLElement
  laneTse: HTMLElement
  enrollmentAudio: HTMLAudioElement
  tseAudio: HTMLAudioElement
  refinedAudio: HTMLAudioElement
  refineButton: HTMLButtonElement
  clearButton: HTMLButtonElement
  undoButton: HTMLButtonElement
  mosButtons: HTMLElement
  configSelect: HTMLSelectElement
  exportView: HTMLElement
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id)
  if (!node) throw new Error(`missing element #${id}`)
  return node as T
}

function collectElements(): Elements {
  return {
    status: el('status'),
    laneMixture: el('lane-mixture'),
    laneTse: el('lane-tse'),
    enrollmentAudio: el('audio-enrollment'),
    tseAudio: el('audio-tse'),
    refinedAudio: el('audio-refined'),
    refineButton: el('btn-refine'),
    clearButton: el('btn-clear'),
    undoButton: el('btn-undo'),
    mosButtons: el('mos-buttons'),
    configSelect: el('config-select'),
    exportView: el('export-view'),
  }
}

async function showSample(
  elements: Elements,
  sessionId: string,
  sample: NextSample,
  audioContext: AudioContext,
): Promise<void> {
  const sampleId = sample.sample_id
  if (sampleId === undefined || !sample.audio || sample.duration_s === undefined) return
  const phase = sample.familiarization ? 'familiarization' : 'analysis'
  elements.status.textContent =
    `sample ${(sample.index ?? 0) + 1} / ${sample.total} (${phase}): ${sampleId}`

  elements.laneMixture.replaceChildren()
  elements.laneTse.replaceChildren()
  const mixtureLane = new WaveformLane({
    container: elements.laneMixture,
    duration: sample.duration_s,
    interactive: false,
  })
  const tseLane = new WaveformLane({
    container: elements.laneTse,
    duration: sample.duration_s,
  })
  void mixtureLane.loadAudio(await api.fetchAudioBytes(sample.audio.mixture), audioContext)
  void tseLane.loadAudio(await api.fetchAudioBytes(sample.audio.tse_output), audioContext)

  elements.enrollmentAudio.src = api.audioUrl(sample.audio.enrollment)
  elements.tseAudio.src = api.audioUrl(sample.audio.tse_output)
  elements.refinedAudio.removeAttribute('src')

  elements.clearButton.onclick = () => tseLane.clearRegions()
  elements.undoButton.onclick = () => tseLane.undo()
  elements.refineButton.onclick = async () => {
    elements.refineButton.disabled = true
    try {
      await api.submitAnnotation(sampleId, sessionId, tseLane.getRegions())
      const refined = await api.refine(sampleId, sessionId)
      elements.refinedAudio.src = api.audioUrl(refined.audio_url)
      elements.status.textContent = `${sampleId}: refined audio ready — compare and rate`
    } finally {
      elements.refineButton.disabled = false
    }
  }

  elements.mosButtons.replaceChildren()
  for (let mos = 1; mos <= 5; mos++) {
    const button = document.createElement('button')
    button.textContent = String(mos)
    button.onclick = async () => {
      const config = elements.configSelect.value as RatingConfig
      await api.rate(sampleId, sessionId, config, mos)
      await advance(elements, sessionId, audioContext)
    }
    elements.mosButtons.appendChild(button)
  }
}

async function advance(
  elements: Elements,
  sessionId: string,
  audioContext: AudioContext,
): Promise<void> {
  const next = await api.nextSample(sessionId)
  if (next.done) {
    elements.status.textContent = 'session complete'
    const exported = await api.exportSession(sessionId)
    elements.exportView.textContent = JSON.stringify(exported, null, 2)
    return
  }
  await showSample(elements, sessionId, next, audioContext)
}

async function start(): Promise<void> {
  const elements = collectElements()
  const annotator = window.prompt('annotator id?', 'anonymous') ?? 'anonymous'
  const session = await api.createSession(annotator)
  const audioContext = new AudioContext()
  await advance(elements, session.session_id, audioContext)
}

if (typeof document !== 'undefined' && document.getElementById('status')) {
  start().catch((error) => {
    const status = document.getElementById('status')
    if (status) status.textContent = `error: ${error}`
  })
}
