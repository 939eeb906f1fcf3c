/** Hand-raise ping: a short two-tone chime via WebAudio. */

let ctx: AudioContext | null = null;

export function playPing(): void {
  try {
    ctx = ctx ?? new AudioContext();
    const t0 = ctx.currentTime;
    for (const [offset, freq] of [
      [0, 880],
      [0.12, 1175],
    ] as const) {
      const osc = ctx.createOscillator();
      const gain = ctx.createGain();
      osc.frequency.value = freq;
      gain.gain.setValueAtTime(0.0001, t0 + offset);
      gain.gain.exponentialRampToValueAtTime(0.2, t0 + offset + 0.02);
      gain.gain.exponentialRampToValueAtTime(0.0001, t0 + offset + 0.25);
      osc.connect(gain).connect(ctx.destination);
      osc.start(t0 + offset);
      osc.stop(t0 + offset + 0.3);
    }
  } catch {
    // No audio permission or context: the visual hand icon still renders.
  }
}
