// Session controller: fetch items, hold the form state, submit with retry,
// auto-advance. One in-flight request at a time per inspector session; the
// DOM layer only renders the snapshot this controller exposes.

import { ReviewApi } from './api.js';
import { ReviewFormState, StorageLike } from './state.js';
import { isDone, Progress, ReviewItem } from './types.js';

export type Phase = 'loading' | 'reviewing' | 'submitting' | 'retrying' | 'done' | 'error';

export interface Snapshot {
    phase: Phase;
    item: ReviewItem | null;
    form: ReviewFormState | null;
    progress: Progress | null;
    toast: string | null;
    error: string | null;
}

export interface ControllerOptions {
    maxSubmitRetries?: number;
    retryDelayMs?: number;
    sleep?: (ms: number) => Promise<void>;
    storage?: StorageLike | null;
}

const defaultSleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

export class SessionController {
    private phase: Phase = 'loading';
    private item: ReviewItem | null = null;
    private form: ReviewFormState | null = null;
    private progress: Progress | null = null;
    private toast: string | null = null;
    private error: string | null = null;
    private listeners: Array<(s: Snapshot) => void> = [];
    private busy = false;

    private readonly maxSubmitRetries: number;
    private readonly retryDelayMs: number;
    private readonly sleep: (ms: number) => Promise<void>;
    private readonly storage: StorageLike | null;

    constructor(
        private api: ReviewApi,
        readonly inspector: string,
        options: ControllerOptions = {},
    ) {
        this.maxSubmitRetries = options.maxSubmitRetries ?? 3;
        this.retryDelayMs = options.retryDelayMs ?? 800;
        this.sleep = options.sleep ?? defaultSleep;
        this.storage = options.storage ?? null;
    }

    snapshot(): Snapshot {
        return {
            phase: this.phase,
            item: this.item,
            form: this.form,
            progress: this.progress,
            toast: this.toast,
            error: this.error,
        };
    }

    subscribe(listener: (s: Snapshot) => void): void {
        this.listeners.push(listener);
    }

    private notify(): void {
        const snap = this.snapshot();
        for (const listener of this.listeners) listener(snap);
    }

    async loadNext(): Promise<void> {
        this.phase = 'loading';
        this.toast = null;
        this.notify();
        try {
            const result = await this.api.nextItem(this.inspector);
            if (isDone(result)) {
                this.phase = 'done';
                this.item = null;
                this.form = null;
                this.progress = result.progress;
            } else {
                this.item = result;
                this.form = new ReviewFormState(this.inspector, result, this.storage);
                this.phase = 'reviewing';
            }
            this.error = null;
        } catch (err) {
            this.phase = 'error';
            this.error = String(err);
        }
        this.notify();
    }

    /** Submit the current form; retries transient failures, then advances.
     *  Safe to retry: the service replaces by (inspector, qa). */
    async submit(): Promise<void> {
        if (this.busy || !this.form || !this.item || !this.form.canSubmit()) return;
        this.busy = true;
        const body = this.form.verdictBody();
        const qaId = this.item.qa_id;
        this.phase = 'submitting';
        this.notify();
        let attempt = 0;
        let toastAfterAdvance: string | null = null;
        for (;;) {
            try {
                const ack = await this.api.submitVerdict(qaId, body);
                this.form.clearDraft();
                if (ack.threshold_met) {
                    toastAfterAdvance = `${qaId} queued for removal (${ack.flag_count} flags)`;
                }
                break;
            } catch (err) {
                attempt += 1;
                if (attempt > this.maxSubmitRetries) {
                    this.phase = 'error';
                    this.error = `submit failed after ${attempt - 1} retries: ${String(err)}`;
                    this.busy = false;
                    this.notify();
                    return;
                }
                this.phase = 'retrying';
                this.notify();
                await this.sleep(this.retryDelayMs * attempt);
            }
        }
        this.busy = false;
        await this.loadNext();
        if (toastAfterAdvance !== null) {
            this.toast = toastAfterAdvance;
            this.notify();
        }
    }
}
