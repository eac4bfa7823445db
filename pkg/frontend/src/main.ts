/** Browser bootstrap: wires the session flow to the DOM.
 *
 * Query parameters select the session: ?annotator=NAME&svd=ID&mode=acr|ccr
 * (optionally &server=http://host:port when the UI is not served from the
 * annotation service origin).
 */

import { ApiClient, type Mode } from "./api.js";
import { HtmlAudioPlayer } from "./player.js";
import { AnnotationFlow, type FlowEvents } from "./session.js";
import { renderTask, renderWarmup, setEnabled, type MinimalDocument,
         type MinimalElement } from "./ui.js";

// the browser document satisfies the renderer's structural interface
const doc = document as unknown as MinimalDocument;

function query(name: string, fallback: string): string {
  return new URLSearchParams(window.location.search).get(name) ?? fallback;
}

async function taskLoop(flow: AnnotationFlow, root: MinimalElement): Promise<void> {
  const task = await flow.fetchTask();
  const view = renderTask(doc, task, {
    onPlay: () => {
      view.status.textContent = "playing...";
      setEnabled([view.playButton], false);
      flow
        .playTask()
        .then(() => {
          view.status.textContent = "pick an answer (replay allowed)";
          setEnabled(view.choiceButtons, true);
          setEnabled([view.playButton], true);
        })
        .catch(() => {
          view.status.textContent = "playback failed, try again";
          setEnabled([view.playButton], true);
        });
    },
    onPick: (value) => {
      setEnabled(view.choiceButtons, false); // no double submissions
      setEnabled([view.playButton], false);
      flow
        .submitChoice(value)
        .then(() => {
          root.textContent = "";
          void taskLoop(flow, root);
        })
        .catch((err) => {
          view.status.textContent = String(err);
          setEnabled(view.choiceButtons, true);
          setEnabled([view.playButton], true);
        });
    },
  });
  root.textContent = "";
  root.appendChild(view.container);
}

async function boot(): Promise<void> {
  const el = document.getElementById("app");
  if (!el) throw new Error("missing #app element");
  const root = el as unknown as MinimalElement;
  const annotator = query("annotator", "anonymous");
  const svd = query("svd", "synth");
  const mode = query("mode", "ccr") as Mode;
  const api = new ApiClient(query("server", ""));
  const events: FlowEvents = {};
  const flow = new AnnotationFlow(api, new HtmlAudioPlayer(), events);

  await flow.start(annotator, svd, mode);
  if (flow.session?.warmup_done) {
    void taskLoop(flow, root);
    return;
  }
  const warmup = renderWarmup(doc, {
    onStart: () => {
      setEnabled([warmup.startButton], false);
      flow
        .runWarmup()
        .then(() => {
          root.textContent = "";
          void taskLoop(flow, root);
        })
        .catch(() => {
          warmup.progress.textContent = "warm-up interrupted, press start to retry";
          warmup.startButton.textContent = "Retry warm-up";
          setEnabled([warmup.startButton], true);
        });
    },
  });
  events.onWarmupProgress = (played, total) => {
    warmup.progress.textContent = `warm-up clip ${played} of ${total}`;
  };
  root.textContent = "";
  root.appendChild(warmup.container);
}

void boot();
