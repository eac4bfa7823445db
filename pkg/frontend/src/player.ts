/** Audio playback abstraction so the session flow is testable headlessly. */

export interface Player {
  /** Resolves when the clip has fully played; rejects on fetch/decode failure. */
  play(url: string): Promise<void>;
}

export class HtmlAudioPlayer implements Player {
  play(url: string): Promise<void> {
    return new Promise((resolve, reject) => {
      const audio = new Audio(url);
      audio.onended = () => resolve();
      audio.onerror = () => reject(new Error(`playback failed for ${url}`));
      audio.play().catch(reject);
    });
  }
}

export function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
