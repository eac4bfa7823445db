/** End-to-end annotation round trip against the real Python service.
 *
 * Spawns `python3 -m svdrank serve` over a freshly synthesized audio corpus,
 * drives a scripted session through the UI flow (warm-up, five comparison
 * answers, five rating answers), and then checks the label file on disk.
 */

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, existsSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import type { Player } from "../src/player.js";
import { AnnotationFlow } from "../src/session.js";

const PORT = 8612 + (process.pid % 200);
const BASE = `http://127.0.0.1:${PORT}`;

let serverProc: ChildProcess | null = null;
let workDir = "";
let labelsPath = "";

/** Downloads each clip like a browser would; "playback" completes when the
 * whole WAV arrived intact. */
class FetchPlayer implements Player {
  played: string[] = [];

  async play(url: string): Promise<void> {
    const resp = await fetch(url);
    if (!resp.ok) throw new Error(`audio fetch failed: ${resp.status}`);
    const bytes = new Uint8Array(await resp.arrayBuffer());
    const riff = String.fromCharCode(...bytes.slice(0, 4));
    if (riff !== "RIFF") throw new Error("not a WAV payload");
    this.played.push(url);
  }
}

async function waitForServer(timeoutMs: number): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const resp = await fetch(
        `${BASE}/api/session/new?annotator=probe&svd=synth&mode=ccr`,
      );
      if (resp.ok) return;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) throw new Error("annotation service did not start");
    await new Promise((r) => setTimeout(r, 250));
  }
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "svdrank-ui-"));
  labelsPath = join(workDir, "collected.jsonl");
  const synth = spawnSync("python3", [
    "-m", "svdrank", "synth", "--out", join(workDir, "corpus"),
    "--speakers", "12", "--utts", "2", "--dim", "4", "--seed", "5",
    "--acr", "0", "--ccr", "0", "--audio",
  ], { encoding: "utf-8" });
  expect(synth.status, synth.stderr).toBe(0);

  serverProc = spawn("python3", [
    "-m", "svdrank", "serve", "--data-dir", join(workDir, "corpus"),
    "--labels", labelsPath, "--port", String(PORT), "--seed", "9",
  ], { stdio: ["ignore", "pipe", "pipe"] });
  await waitForServer(30_000);
}, 60_000);

afterAll(() => {
  serverProc?.kill("SIGTERM");
});

describe("scripted annotation round trip", () => {
  it("completes warm-up, five comparisons and five ratings; the label file matches",
     async () => {
    const api = new ApiClient(BASE);
    const player = new FetchPlayer();

    // comparison session: warm-up is required first
    const ccrFlow = new AnnotationFlow(api, player, {}, 0);
    const session = await ccrFlow.start("scripted", "synth", "ccr");
    expect(session.warmup_done).toBe(false);
    await ccrFlow.runWarmup();
    expect(player.played).toHaveLength(10);

    const ccrChoices = ["i_more", "i_little", "j_little", "j_more", "i_more"];
    for (const choice of ccrChoices) {
      await ccrFlow.fetchTask();
      expect(ccrFlow.options()).toHaveLength(4); // the forced-choice screen
      await ccrFlow.playTask();
      const stored = await ccrFlow.submitChoice(choice);
      expect(stored?.record).toMatchObject({ choice, svd: "synth" });
    }
    // pair members play in order i then j
    const taskClips = player.played.slice(10);
    expect(taskClips).toHaveLength(10);
    for (const entry of ccrFlow.submitted) {
      expect(entry.task.mode).toBe("ccr");
    }

    // rating session for the same annotator skips warm-up (server remembers)
    const acrFlow = new AnnotationFlow(api, player, {}, 0);
    const acrSession = await acrFlow.start("scripted", "synth", "acr");
    expect(acrSession.warmup_done).toBe(true);
    const ratings = [1, 2, 3, 4, 5];
    for (const rating of ratings) {
      await acrFlow.fetchTask();
      expect(acrFlow.options()).toHaveLength(5);
      await acrFlow.playTask();
      const stored = await acrFlow.submitChoice(String(rating));
      expect(stored?.record).toMatchObject({ rating, svd: "synth" });
    }

    // the server-side label file holds exactly the ten submitted records
    expect(existsSync(labelsPath)).toBe(true);
    const lines = readFileSync(labelsPath, "utf-8").trim().split("\n");
    expect(lines).toHaveLength(10);
    const records = lines.map((l) => JSON.parse(l) as Record<string, unknown>);
    const ccrRecords = records.filter((r) => "choice" in r);
    const acrRecords = records.filter((r) => "rating" in r);
    expect(ccrRecords.map((r) => r.choice)).toEqual(ccrChoices);
    expect(acrRecords.map((r) => r.rating)).toEqual(ratings);
    for (const [k, entry] of ccrFlow.submitted.entries()) {
      expect(ccrRecords[k]).toEqual(entry.record);
      const task = entry.task;
      if (task.mode === "ccr") {
        expect(ccrRecords[k]!.utt_i).toBe(task.utt_i);
        expect(ccrRecords[k]!.utt_j).toBe(task.utt_j);
      }
    }
    for (const [k, entry] of acrFlow.submitted.entries()) {
      expect(acrRecords[k]).toEqual(entry.record);
    }
  }, 90_000);
});
