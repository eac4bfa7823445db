/** DOM rendering for the annotation flow.
 *
 * The renderer works against a minimal structural document interface so the
 * option-set invariants can be asserted headlessly; a browser `document`
 * satisfies it as-is.
 */

import type { Task } from "./api.js";
import { choiceOptions } from "./options.js";

export interface MinimalElement {
  textContent: string | null;
  className: string;
  disabled?: boolean;
  onclick?: ((ev?: unknown) => void) | null;
  appendChild(child: MinimalElement): unknown;
}

export interface MinimalDocument {
  createElement(tag: string): MinimalElement;
}

export interface RenderedTask {
  container: MinimalElement;
  prompt: MinimalElement;
  playButton: MinimalElement;
  choiceButtons: MinimalElement[];
  status: MinimalElement;
}

/** Builds the task screen: playback control, one button per answer option
 * (disabled until playback completes), and a status line. The comparison
 * screen gets exactly the four forced choices; a fifth option can never
 * appear because the buttons map 1:1 onto the fixed option set. */
export function renderTask(
  doc: MinimalDocument,
  task: Task,
  handlers: {
    onPlay: () => void;
    onPick: (value: string) => void;
  },
): RenderedTask {
  const container = doc.createElement("div");
  container.className = `task task-${task.mode}`;

  const prompt = doc.createElement("p");
  prompt.className = "prompt";
  prompt.textContent =
    task.mode === "ccr"
      ? "Listen to clip i, then clip j. Which one is more so?"
      : "Listen to the clip, then rate it.";
  container.appendChild(prompt);

  const playButton = doc.createElement("button");
  playButton.className = "play";
  playButton.textContent = task.mode === "ccr" ? "Play i then j" : "Play clip";
  playButton.onclick = () => handlers.onPlay();
  container.appendChild(playButton);

  const options = choiceOptions(task.mode);
  if (task.mode === "ccr" && options.length !== 4) {
    throw new Error("comparison tasks must offer exactly four choices");
  }
  const row = doc.createElement("div");
  row.className = "choices";
  const choiceButtons: MinimalElement[] = [];
  for (const option of options) {
    const button = doc.createElement("button");
    button.className = `choice choice-${option.value}`;
    button.textContent = option.label;
    button.disabled = true; // answers unlock only after full playback
    button.onclick = () => handlers.onPick(option.value);
    row.appendChild(button);
    choiceButtons.push(button);
  }
  container.appendChild(row);

  const status = doc.createElement("p");
  status.className = "status";
  status.textContent = "";
  container.appendChild(status);

  return { container, prompt, playButton, choiceButtons, status };
}

export interface RenderedWarmup {
  container: MinimalElement;
  progress: MinimalElement;
  startButton: MinimalElement;
}

export function renderWarmup(
  doc: MinimalDocument,
  handlers: { onStart: () => void },
): RenderedWarmup {
  const container = doc.createElement("div");
  container.className = "warmup";
  const note = doc.createElement("p");
  note.textContent =
    "Before labeling you will hear ten random clips to get a sense of the corpus.";
  container.appendChild(note);
  const progress = doc.createElement("p");
  progress.className = "warmup-progress";
  progress.textContent = "";
  container.appendChild(progress);
  const startButton = doc.createElement("button");
  startButton.className = "warmup-start";
  startButton.textContent = "Start warm-up";
  startButton.onclick = () => handlers.onStart();
  container.appendChild(startButton);
  return { container, progress, startButton };
}

export function setEnabled(buttons: MinimalElement[], enabled: boolean): void {
  for (const b of buttons) b.disabled = !enabled;
}
