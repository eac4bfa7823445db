/** Annotation session state machine: warmup -> task -> submitting -> task.
 *
 * One task is active at a time; answer controls are only enabled after every
 * clip of the task has played to the end (replay is allowed), and a stale
 * task conflict fetches a fresh task instead of failing the session.
 */

import {
  ApiError,
  type AnnotationApi,
  type LabelPayload,
  type Mode,
  type SessionInfo,
  type StoredLabel,
  type Task,
} from "./api.js";
import { choiceOptions, type ChoiceOption } from "./options.js";
import { sleep, type Player } from "./player.js";

export type Phase =
  | "created"
  | "warming-up"
  | "warmup-failed"
  | "ready"
  | "playing"
  | "answerable"
  | "submitting";

export interface FlowEvents {
  onPhase?: (phase: Phase) => void;
  onWarmupProgress?: (played: number, total: number) => void;
  onError?: (message: string) => void;
}

export interface SubmittedEntry {
  task: Task;
  payload: LabelPayload;
  record: Record<string, unknown>;
}

const INTER_CLIP_GAP_MS = 500;

export class AnnotationFlow {
  phase: Phase = "created";
  session: SessionInfo | null = null;
  currentTask: Task | null = null;
  /** local log of everything stored server-side, for round-trip checks */
  readonly submitted: SubmittedEntry[] = [];

  constructor(
    private readonly api: AnnotationApi,
    private readonly player: Player,
    private readonly events: FlowEvents = {},
    private readonly gapMs: number = INTER_CLIP_GAP_MS,
  ) {}

  private setPhase(phase: Phase): void {
    this.phase = phase;
    this.events.onPhase?.(phase);
  }

  async start(annotator: string, svd: string, mode: Mode): Promise<SessionInfo> {
    this.session = await this.api.newSession(annotator, svd, mode);
    this.setPhase(this.session.warmup_done ? "ready" : "created");
    return this.session;
  }

  private requireSession(): SessionInfo {
    if (!this.session) throw new Error("session not started");
    return this.session;
  }

  /** Plays all ten warm-up clips, then unlocks the task flow. A playback or
   * fetch failure leaves the flow in "warmup-failed" for an explicit retry;
   * the server returns the same clip list, so a retry (or a page reload)
   * resumes rather than re-drawing. */
  async runWarmup(): Promise<void> {
    const session = this.requireSession();
    if (session.warmup_done) {
      this.setPhase("ready");
      return;
    }
    this.setPhase("warming-up");
    try {
      const list = await this.api.warmup(session.session_id);
      const total = list.utterances.length;
      this.events.onWarmupProgress?.(0, total);
      for (let k = 0; k < total; k += 1) {
        await this.player.play(this.api.audioUrl(list.utterances[k]!));
        this.events.onWarmupProgress?.(k + 1, total);
      }
      await this.api.warmupDone(session.session_id);
      session.warmup_done = true;
      this.setPhase("ready");
    } catch (err) {
      this.setPhase("warmup-failed");
      this.events.onError?.(`warm-up interrupted: ${String(err)}`);
      throw err;
    }
  }

  async fetchTask(): Promise<Task> {
    const session = this.requireSession();
    if (!session.warmup_done) throw new Error("warm-up must finish first");
    if (this.phase === "playing" || this.phase === "submitting") {
      throw new Error(`cannot fetch a task while ${this.phase}`);
    }
    this.currentTask = await this.api.nextTask(session.session_id);
    this.setPhase("ready");
    return this.currentTask;
  }

  /** Clip urls of the current task in presentation order (i strictly before j). */
  taskAudioUrls(): string[] {
    const task = this.currentTask;
    if (!task) throw new Error("no active task");
    return task.mode === "ccr"
      ? [this.api.audioUrl(task.utt_i), this.api.audioUrl(task.utt_j)]
      : [this.api.audioUrl(task.utterance)];
  }

  /** Plays every clip of the active task to the end, in order, with a short
   * gap between the pair members; only then do answers unlock. */
  async playTask(): Promise<void> {
    if (!this.currentTask) throw new Error("no active task");
    if (this.phase === "submitting") throw new Error("submission in progress");
    this.setPhase("playing");
    try {
      const urls = this.taskAudioUrls();
      for (let k = 0; k < urls.length; k += 1) {
        if (k > 0 && this.gapMs > 0) await sleep(this.gapMs);
        await this.player.play(urls[k]!);
      }
      this.setPhase("answerable");
    } catch (err) {
      this.setPhase("ready");
      this.events.onError?.(`playback failed: ${String(err)}`);
      throw err;
    }
  }

  /** Answer options for the active task; the comparison screen never offers
   * more (or fewer) than the four forced choices. */
  options(): readonly ChoiceOption[] {
    const task = this.currentTask;
    if (!task) throw new Error("no active task");
    const opts = choiceOptions(task.mode);
    if (task.mode === "ccr" && opts.length !== 4) {
      throw new Error("comparison tasks must offer exactly four choices");
    }
    return opts;
  }

  /** Posts the picked option. On a stale-task conflict the flow recovers by
   * fetching a fresh task; other server rejections surface to the caller. */
  async submitChoice(value: string): Promise<StoredLabel | null> {
    const session = this.requireSession();
    const task = this.currentTask;
    if (!task) throw new Error("no active task");
    if (this.phase !== "answerable") {
      throw new Error("answers unlock after playback finishes");
    }
    const payload: LabelPayload =
      task.mode === "ccr" ? { choice: value } : { rating: Number(value) };
    this.setPhase("submitting");
    try {
      const stored = await this.api.submitLabel(session.session_id, task.task_id, payload);
      this.submitted.push({ task, payload, record: stored.record });
      this.currentTask = null;
      this.setPhase("ready");
      return stored;
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.currentTask = null;
        this.setPhase("ready");
        await this.fetchTask();
        return null;
      }
      this.setPhase("answerable");
      this.events.onError?.(`submission rejected: ${String(err)}`);
      throw err;
    }
  }
}
